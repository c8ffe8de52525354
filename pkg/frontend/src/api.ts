/**
 * Typed HTTP client for the session service.
 *
 * Every call returns both the parsed body and the verbatim response
 * text.  The raw text is what the renderer slices displayed numbers
 * from, so it must never be reconstructed from the parsed object.
 */

export interface PrivacyBlock {
  eps_max: number;
  delta_total: number;
}

export interface BudgetBlock {
  kmax_remaining: number;
  ellmax_remaining: number;
}

export interface CreateSessionRequest {
  kmax: number;
  ellmax: number;
  eps: number;
  delta: number;
  delta_prime: number;
}

export interface CreateSessionResponse {
  session_id: string;
  privacy: PrivacyBlock;
}

export interface QueryRequest {
  histogram?: Record<string, number>;
  dataset_ref?: string;
  k: number;
  kbar: number;
  mechanism: string;
  sensitivity: number | string;
}

export interface QueryAccepted {
  status: "ok";
  indices: string[];
  terminated: boolean;
  cost: number;
  kbar_selected: number | null;
  budget: BudgetBlock;
}

export interface QueryRejected {
  status: "rejected";
  code: string;
  message: string;
  budget: BudgetBlock;
}

export type QueryOutcome = QueryAccepted | QueryRejected;

export interface LogRow {
  k: number;
  kbar: number;
  mechanism: string;
  indices: string[];
  terminated: boolean;
  cost: number;
}

export interface SessionReport {
  session_id: string;
  privacy: PrivacyBlock;
  spent: number;
  queries: number;
  budget: {
    kmax_initial: number;
    kmax_remaining: number;
    ellmax_initial: number;
    ellmax_remaining: number;
  };
  log: LogRow[];
}

export interface DatasetCreated {
  dataset_id: string;
}

/** Parsed body plus the exact bytes it was parsed from. */
export interface ApiResult<T> {
  body: T;
  raw: string;
  status: number;
}

/** Error envelope raised for any non-2xx response. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  async createSession(
    req: CreateSessionRequest,
  ): Promise<ApiResult<CreateSessionResponse>> {
    return this.request<CreateSessionResponse>("POST", "/v1/sessions", {
      json: req,
    });
  }

  async submitQuery(
    sessionId: string,
    req: QueryRequest,
    seed?: number,
  ): Promise<ApiResult<QueryOutcome>> {
    const headers: Record<string, string> = {};
    if (seed !== undefined) {
      headers["X-Seed"] = String(seed);
    }
    return this.request<QueryOutcome>(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/query`,
      { json: req, headers },
    );
  }

  async getSession(sessionId: string): Promise<ApiResult<SessionReport>> {
    return this.request<SessionReport>(
      "GET",
      `/v1/sessions/${encodeURIComponent(sessionId)}`,
    );
  }

  async closeSession(sessionId: string): Promise<ApiResult<SessionReport>> {
    return this.request<SessionReport>(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/close`,
    );
  }

  async uploadDataset(csv: string): Promise<ApiResult<DatasetCreated>> {
    return this.request<DatasetCreated>("POST", "/v1/datasets", {
      text: csv,
      contentType: "text/csv",
    });
  }

  private async request<T>(
    method: string,
    path: string,
    options: {
      json?: unknown;
      text?: string;
      contentType?: string;
      headers?: Record<string, string>;
    } = {},
  ): Promise<ApiResult<T>> {
    const headers: Record<string, string> = { ...(options.headers ?? {}) };
    let body: string | undefined;
    if (options.json !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(options.json);
    } else if (options.text !== undefined) {
      headers["Content-Type"] = options.contentType ?? "text/plain";
      body = options.text;
    }
    const res = await this.fetchImpl(this.base + path, { method, headers, body });
    const raw = await res.text();
    let parsed: unknown;
    try {
      parsed = JSON.parse(raw);
    } catch {
      throw new ApiError(res.status, "internal", `non-JSON response: ${raw.slice(0, 200)}`);
    }
    if (!res.ok) {
      const envelope = parsed as { code?: string; message?: string };
      throw new ApiError(
        res.status,
        envelope.code ?? "internal",
        envelope.message ?? `request failed with status ${res.status}`,
      );
    }
    return { body: parsed as T, raw, status: res.status };
  }
}
