/** Session flow: one pending query on screen, at most one in-flight label.
 *
 * All state lives on the server; the controller only mirrors the latest
 * payloads, so refreshing the browser reproduces the exact same view.
 */

import { ApiClient, QueryPayload, Risk, StatusPayload } from "./api.js";

export type ViewState =
  | { kind: "loading" }
  | {
      kind: "query";
      query: QueryPayload;
      status: StatusPayload;
      submitting: boolean;
      notice?: string;
    }
  | { kind: "done"; query: QueryPayload; status: StatusPayload }
  | { kind: "error"; message: string; raw?: unknown };

export type RenderFn = (state: ViewState) => void;

function schemaValid(query: QueryPayload): boolean {
  if (query.done) return true;
  return (
    typeof query.case_id === "string" &&
    Array.isArray(query.events) &&
    Array.isArray(query.probs) &&
    query.probs.length === 2 &&
    typeof query.margin === "number"
  );
}

export class SessionController {
  private state: ViewState = { kind: "loading" };
  private inFlight = false;

  constructor(
    private readonly client: ApiClient,
    private readonly sessionId: string,
    private readonly render: RenderFn,
  ) {}

  current(): ViewState {
    return this.state;
  }

  private set(state: ViewState): void {
    this.state = state;
    this.render(state);
  }

  /** Fetch status + pending query and render; safe to call at any time. */
  async refresh(): Promise<void> {
    this.set({ kind: "loading" });
    let status: StatusPayload;
    let query: QueryPayload;
    try {
      status = await this.client.getStatus(this.sessionId);
      query = await this.client.getQuery(this.sessionId);
    } catch (err) {
      this.set({ kind: "error", message: String(err) });
      return;
    }
    if (!schemaValid(query)) {
      this.set({ kind: "error", message: "unexpected query payload", raw: query });
      return;
    }
    if (query.done) {
      this.set({ kind: "done", query, status });
    } else {
      this.set({ kind: "query", query, status, submitting: false });
    }
  }

  /** Post the choice for the pending query, then advance to the next one.
   *
   * A 409 means the query on screen went stale (another client labeled it,
   * or a retry raced an earlier success): refetch without posting again.
   * A network failure restores the pending view with a retry notice; the
   * server's stale-query check makes the eventual retry safe.
   */
  async submitAndAdvance(choice: Risk): Promise<void> {
    if (this.state.kind !== "query" || this.inFlight) {
      return;
    }
    const { query, status } = this.state;
    this.inFlight = true;
    this.set({ kind: "query", query, status, submitting: true });
    try {
      const result = await this.client.submitLabel(this.sessionId, query.case_id as string, choice);
      if (result.kind === "error") {
        this.set({ kind: "error", message: `label rejected: ${result.detail}` });
        return;
      }
      await this.refresh();
    } catch (err) {
      this.set({
        kind: "query",
        query,
        status,
        submitting: false,
        notice: `submission failed, retry: ${String(err)}`,
      });
    } finally {
      this.inFlight = false;
    }
  }
}
