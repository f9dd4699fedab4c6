/** Typed client for the review service. All traffic goes through here. */

import type {
  NextPairPayload,
  ResultsPayload,
  SessionInfo,
  VoteAccepted,
  VoteRequest,
} from "./types.js";

/** Non-2xx response, carrying the service's machine-readable error code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
    this.name = "ApiError";
  }
}

/** True for failures that never reached the server (fetch rejections). */
export function isNetworkError(err: unknown): boolean {
  return !(err instanceof ApiError) && err instanceof Error;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let code = `HTTP${response.status}`;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: string; detail?: string };
    if (typeof body.error === "string") code = body.error;
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status-derived fallbacks
  }
  return new ApiError(response.status, code, detail);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  /** Join (or rejoin) the session for this evaluator name. */
  session(evaluator: string): Promise<SessionInfo> {
    return this.get(`/api/session?evaluator=${encodeURIComponent(evaluator)}`);
  }

  /** First uncompleted pair for the session, or the exhausted marker. */
  nextPair(sessionId: string): Promise<NextPairPayload> {
    return this.get(`/api/pairs/next?session=${encodeURIComponent(sessionId)}`);
  }

  async submitVote(vote: VoteRequest): Promise<VoteAccepted> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/votes`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(vote),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as VoteAccepted;
  }

  results(): Promise<ResultsPayload> {
    return this.get("/api/results");
  }
}

export interface RetryOptions {
  /** Total attempts, first try included. */
  attempts?: number;
  delayMs?: number;
  /** Called before each retry so the UI can say what is happening. */
  onRetry?: (attempt: number, err: unknown) => void;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * Retry a request over transient network failures. Definitive answers —
 * any HTTP response, success or error — are never retried: a 4xx means the
 * server got the request and said no, and replaying it would be wrong.
 */
export async function withRetry<T>(fn: () => Promise<T>, options: RetryOptions = {}): Promise<T> {
  const attempts = options.attempts ?? 3;
  const delayMs = options.delayMs ?? 500;
  const sleep = options.sleep ?? defaultSleep;
  let lastError: unknown;
  for (let attempt = 1; attempt <= attempts; attempt += 1) {
    try {
      return await fn();
    } catch (err) {
      if (!isNetworkError(err)) throw err;
      lastError = err;
      if (attempt < attempts) {
        options.onRetry?.(attempt, err);
        await sleep(delayMs * attempt);
      }
    }
  }
  throw lastError;
}
