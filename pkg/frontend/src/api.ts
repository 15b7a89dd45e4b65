/** Typed client for the annotation service HTTP API. */

export interface EventRow {
  event: string;
  t_hours: number;
}

export interface QueryPayload {
  done: boolean;
  iteration: number;
  labeled_count: number;
  unlabeled_count: number;
  case_id?: string | null;
  events?: EventRow[] | null;
  probs?: [number, number] | null;
  margin?: number | null;
  oracle_risk?: 0 | 1 | null;
  accuracy_history?: number[] | null;
}

export interface StatusPayload {
  session_id: string;
  iteration: number;
  labeled_count: number;
  unlabeled_count: number;
  test_count: number;
  accuracy_history: number[];
  done: boolean;
  config: Record<string, unknown>;
}

export interface LabelAck {
  iteration: number;
  labeled_count: number;
  unlabeled_count: number;
  done: boolean;
}

export type Risk = 0 | 1;

export type SubmitResult =
  | { kind: "ok"; ack: LabelAck }
  | { kind: "stale"; detail: string }
  | { kind: "error"; status: number; detail: string };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`API error ${status}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.url(path));
    if (!response.ok) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return (await response.json()) as T;
  }

  getStatus(sessionId: string): Promise<StatusPayload> {
    return this.getJson(`/api/sessions/${sessionId}/status`);
  }

  getQuery(sessionId: string): Promise<QueryPayload> {
    return this.getJson(`/api/sessions/${sessionId}/query`);
  }

  /** Submit one label; a 409 (stale query) is a normal outcome, not a throw. */
  async submitLabel(sessionId: string, caseId: string, risk: Risk): Promise<SubmitResult> {
    const response = await this.fetchImpl(this.url(`/api/sessions/${sessionId}/labels`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ case_id: caseId, risk }),
    });
    if (response.ok) {
      return { kind: "ok", ack: (await response.json()) as LabelAck };
    }
    const detail = await detailOf(response);
    if (response.status === 409) {
      return { kind: "stale", detail };
    }
    return { kind: "error", status: response.status, detail };
  }
}
