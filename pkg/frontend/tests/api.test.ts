import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { protocolServer } from "./fake-server.js";

describe("ApiClient", () => {
  it("fetches status and query", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    const status = await client.getStatus("sess-1");
    expect(status.labeled_count).toBe(4);
    expect(status.unlabeled_count).toBe(9);

    const query = await client.getQuery("sess-1");
    expect(query.done).toBe(false);
    expect(query.case_id).toBe("PMC10077184");
    expect(query.events).toHaveLength(8);
  });

  it("repeated query fetches are identical until a label lands", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    const q1 = await client.getQuery("sess-1");
    const q2 = await client.getQuery("sess-1");
    expect(q2).toEqual(q1);
  });

  it("submits a label and returns the ack", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    const query = await client.getQuery("sess-1");
    const result = await client.submitLabel("sess-1", query.case_id as string, 1);
    expect(result.kind).toBe("ok");
    if (result.kind === "ok") {
      expect(result.ack.labeled_count).toBe(5);
      expect(result.ack.unlabeled_count).toBe(8);
    }
  });

  it("maps 409 to a stale result instead of throwing", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    const result = await client.submitLabel("sess-1", "not-the-pending-one", 0);
    expect(result.kind).toBe("stale");
  });

  it("maps other failures to error results", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    const query = await client.getQuery("sess-1");
    const result = await client.submitLabel("sess-1", query.case_id as string, 7 as 0 | 1);
    expect(result.kind).toBe("error");
    if (result.kind === "error") {
      expect(result.status).toBe(422);
    }
  });

  it("throws ApiError for unknown sessions", async () => {
    const server = protocolServer();
    const client = new ApiClient("", server.fetch);
    await expect(client.getStatus("missing")).rejects.toBeInstanceOf(ApiError);
  });
});
