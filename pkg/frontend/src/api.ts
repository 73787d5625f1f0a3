// Thin typed client over the service endpoints.  All data shown in the UI
// comes from these calls; nothing is computed client-side.

import type {
  ErrorBody,
  GraphDoc,
  SliceDoc,
  StateDoc,
  TraceMeta,
  VerdictDoc,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

export interface CheckJob {
  status: "running" | "done" | "error";
  verdict?: VerdictDoc;
  error?: ErrorBody["error"];
}

export class Client {
  constructor(
    private readonly baseUrl: string,
    private readonly doFetch: FetchLike,
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const res = await this.doFetch(this.baseUrl + path, body === undefined
      ? undefined
      : {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        });
    const doc = (await res.json()) as T | ErrorBody;
    if (res.status >= 400) {
      const err = (doc as ErrorBody).error;
      throw new ApiError(err?.code ?? "http-error",
        err?.message ?? `HTTP ${res.status}`, res.status);
    }
    return doc as T;
  }

  submitCheck(specSource: string, property: string): Promise<{ job_id: string }> {
    return this.request("/api/check", { spec_source: specSource, property });
  }

  pollCheck(jobId: string): Promise<CheckJob> {
    return this.request(`/api/check/${jobId}`);
  }

  traceMeta(traceId: string): Promise<TraceMeta> {
    return this.request(`/api/trace/${traceId}`);
  }

  traceState(traceId: string, index: number): Promise<StateDoc> {
    return this.request(`/api/trace/${traceId}/state/${index}`);
  }

  slice(traceId: string, stateIndex: number, pattern: string): Promise<SliceDoc> {
    return this.request(`/api/trace/${traceId}/slice`, {
      state_index: stateIndex,
      pattern,
    });
  }

  graph(traceId: string): Promise<GraphDoc> {
    return this.request(`/api/trace/${traceId}/graph`);
  }
}
