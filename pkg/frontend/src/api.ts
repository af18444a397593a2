/**
 * Typed client for the gateway /v1 API.
 *
 * The fetch function is injected so tests can script responses. The API key
 * lives only in this object (entered at login, never persisted).
 */

export type Record_ = { [param: string]: unknown };
export type Param = [name: string, kind: string];

export interface Signature {
  inputs: Param[];
  outputs: Param[];
  context_params: Param[];
}

export interface SampleDoc {
  id: string;
  caller_id: string;
  inputs: Record_;
  context: Record_;
  output: Record_;
  origin: string;
  split: string;
  supervision: string;
  review?: { state: string; token?: string };
  original_output?: Record_;
  reward?: number;
  created_at: number;
  config_version: number;
}

export interface PendingReview {
  token: string;
  sample: SampleDoc;
}

export interface MemberMetricsDoc {
  gold_accuracy: number | null;
  silver_accuracy: number | null;
  combined_accuracy: number | null;
  sample_counts: { [k: string]: number };
  latency_ewma_s: number | null;
  last_evaluated: number | null;
}

export interface MemberRow {
  registration_id: string;
  callable_id: string;
  role: string;
  qualification: string;
  metrics: MemberMetricsDoc;
  invocations: number;
}

export interface MetricsDoc {
  caller_id: string;
  category_counts: { gold: number; platinum: number; silver: number; bronze: number };
  sample_count: number;
  host_invocations: number;
  call_target: string;
  members: MemberRow[];
  learned_weights: { [id: string]: number } | null;
}

export interface CallerSummary {
  id: string;
  name: string;
  sample_count: number;
  call_target: string;
  plan_state: string | null;
}

export interface CallerDetail extends CallerSummary {
  signature: Signature;
}

export interface PlanDoc {
  caller_id: string;
  candidate_rid: string;
  state: string;
  history: { at: number; transition: string; evidence: Record_ }[];
  active: boolean;
}

export interface DriftDoc {
  status: "ok" | "alert" | "not_enough_data";
  windowed_accuracy: number | null;
  baseline_accuracy: number | null;
  supervised_count: number;
  alert: Record_ | null;
}

export interface CollabDoc {
  id: string;
  caller_id: string;
  inputs: Record_;
  deadline: number;
  state: "open" | "answered" | "timed_out";
  opened_at: number;
}

export class GatewayError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }

  get alreadyReviewed(): boolean {
    return this.status === 409;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    private baseUrl: string,
    private apiKey: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/v1${path}`, {
        method,
        headers: {
          "X-Api-Key": this.apiKey,
          ...(body === undefined ? {} : { "Content-Type": "application/json" }),
        },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new GatewayError(0, "unreachable", String(err));
    }
    if (!resp.ok) {
      let code = "error";
      let message = `HTTP ${resp.status}`;
      try {
        const doc = (await resp.json()) as { error?: { code?: string; message?: string } };
        code = doc.error?.code ?? code;
        message = doc.error?.message ?? message;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new GatewayError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  listCallers(): Promise<CallerSummary[]> {
    return this.request("GET", "/callers");
  }

  showCaller(id: string): Promise<CallerDetail> {
    return this.request("GET", `/callers/${encodeURIComponent(id)}`);
  }

  pendingReviews(callerId: string, limit = 50): Promise<PendingReview[]> {
    return this.request(
      "GET",
      `/callers/${encodeURIComponent(callerId)}/reviews?state=pending&limit=${limit}`,
    );
  }

  confirm(token: string): Promise<SampleDoc> {
    return this.request("POST", `/reviews/${encodeURIComponent(token)}`, {
      action: "confirm",
    });
  }

  override(token: string, output: Record_): Promise<SampleDoc> {
    return this.request("POST", `/reviews/${encodeURIComponent(token)}`, {
      action: "override",
      output,
    });
  }

  metrics(callerId: string): Promise<MetricsDoc> {
    return this.request("GET", `/callers/${encodeURIComponent(callerId)}/metrics`);
  }

  plan(callerId: string): Promise<PlanDoc | null> {
    return this.request<PlanDoc>("GET", `/callers/${encodeURIComponent(callerId)}/plan`).catch(
      (err) => {
        if (err instanceof GatewayError && err.status === 404) return null;
        throw err;
      },
    );
  }

  drift(callerId: string, window = 200): Promise<DriftDoc> {
    return this.request(
      "GET",
      `/callers/${encodeURIComponent(callerId)}/drift?window=${window}`,
    );
  }

  openCollab(): Promise<CollabDoc[]> {
    return this.request("GET", "/collab?state=open");
  }

  answerCollab(id: string, output: Record_): Promise<CollabDoc> {
    return this.request("POST", `/collab/${encodeURIComponent(id)}/answer`, { output });
  }
}
