// REST client. Fetch is injected so tests can drive it with canned
// responses; polling of async suggestion jobs backs off exponentially and
// rides out transient server errors.

import type {
  JobStatus,
  JobTicket,
  ObserveResult,
  PredictiveDoc,
  SessionSummary,
  Suggestion,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export interface PollOptions {
  initialDelayMs?: number;
  maxDelayMs?: number;
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

async function parseError(status: number, body: unknown): Promise<ApiError> {
  const detail = (body as { detail?: { code?: string; message?: string } })
    ?.detail;
  return new ApiError(
    status,
    detail?.code ?? "http_error",
    detail?.message ?? `request failed with status ${status}`,
  );
}

export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike,
  ) {}

  private async request<T>(
    path: string,
    method = "GET",
    body?: unknown,
  ): Promise<T> {
    const resp = await this.fetchFn(this.base + path, {
      method,
      headers: body ? { "content-type": "application/json" } : undefined,
      body: body ? JSON.stringify(body) : undefined,
    });
    const doc = await resp.json();
    if (resp.status >= 400) throw await parseError(resp.status, doc);
    return doc as T;
  }

  createSession(
    scenario: string,
    scenarioParams: Record<string, unknown>,
    config: Record<string, unknown>,
  ): Promise<SessionSummary> {
    return this.request("/sessions", "POST", {
      scenario,
      scenario_params: scenarioParams,
      config,
    });
  }

  getSession(id: string): Promise<SessionSummary> {
    return this.request(`/sessions/${id}`);
  }

  suggest(id: string, alpha?: number): Promise<Suggestion> {
    return this.request(`/sessions/${id}/suggest`, "POST", {
      run_async: false,
      alpha: alpha ?? null,
    });
  }

  observe(
    id: string,
    candidateIndex: number,
    yNew: number[] | null,
    simulate = false,
  ): Promise<ObserveResult> {
    return this.request(`/sessions/${id}/observe`, "POST", {
      candidate_index: candidateIndex,
      y_new: yNew,
      simulate,
    });
  }

  predictive(id: string): Promise<PredictiveDoc> {
    return this.request(`/sessions/${id}/predictive`);
  }

  metrics(id: string): Promise<{ history: { round: number; mse: number; crps: number }[] }> {
    return this.request(`/sessions/${id}/metrics`);
  }

  // Launch an async suggestion job and poll its status resource until done.
  // Delays double on every attempt (and on transient 5xx responses) up to
  // maxDelayMs.
  async suggestWithPolling(
    id: string,
    opts: PollOptions = {},
  ): Promise<Suggestion> {
    const sleep = opts.sleep ?? defaultSleep;
    const maxAttempts = opts.maxAttempts ?? 30;
    let delay = opts.initialDelayMs ?? 100;
    const maxDelay = opts.maxDelayMs ?? 5000;

    const ticket = await this.request<JobTicket>(
      `/sessions/${id}/suggest`,
      "POST",
      { run_async: true, alpha: null },
    );
    for (let attempt = 0; attempt < maxAttempts; attempt++) {
      await sleep(delay);
      delay = Math.min(delay * 2, maxDelay);
      let status: JobStatus;
      try {
        status = await this.request<JobStatus>(
          ticket.status_url.replace(this.base, ""),
        );
      } catch (err) {
        if (err instanceof ApiError && err.status >= 500) continue;
        throw err;
      }
      if (status.status === "done") return status.result as Suggestion;
      if (status.status === "failed") {
        const failure = status.result as { error: string } | null;
        throw new ApiError(500, "job_failed", failure?.error ?? "job failed");
      }
    }
    throw new ApiError(504, "poll_timeout", "suggestion job never finished");
  }
}
