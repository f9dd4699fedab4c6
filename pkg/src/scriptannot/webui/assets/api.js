/** Typed client for the review service. All traffic goes through here. */
/** Non-2xx response, carrying the service's machine-readable error code. */
export class ApiError extends Error {
    constructor(status, code, detail) {
        super(`${code}: ${detail}`);
        this.status = status;
        this.code = code;
        this.detail = detail;
        this.name = "ApiError";
    }
}
/** True for failures that never reached the server (fetch rejections). */
export function isNetworkError(err) {
    return !(err instanceof ApiError) && err instanceof Error;
}
async function parseError(response) {
    let code = `HTTP${response.status}`;
    let detail = response.statusText;
    try {
        const body = (await response.json());
        if (typeof body.error === "string")
            code = body.error;
        if (typeof body.detail === "string")
            detail = body.detail;
    }
    catch {
        // non-JSON error body; keep the status-derived fallbacks
    }
    return new ApiError(response.status, code, detail);
}
export class ApiClient {
    constructor(baseUrl = "", fetchImpl = (input, init) => fetch(input, init)) {
        this.baseUrl = baseUrl;
        this.fetchImpl = fetchImpl;
    }
    async get(path) {
        const response = await this.fetchImpl(this.baseUrl + path);
        if (!response.ok)
            throw await parseError(response);
        return (await response.json());
    }
    /** Join (or rejoin) the session for this evaluator name. */
    session(evaluator) {
        return this.get(`/api/session?evaluator=${encodeURIComponent(evaluator)}`);
    }
    /** First uncompleted pair for the session, or the exhausted marker. */
    nextPair(sessionId) {
        return this.get(`/api/pairs/next?session=${encodeURIComponent(sessionId)}`);
    }
    async submitVote(vote) {
        const response = await this.fetchImpl(`${this.baseUrl}/api/votes`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(vote),
        });
        if (!response.ok)
            throw await parseError(response);
        return (await response.json());
    }
    results() {
        return this.get("/api/results");
    }
}
const defaultSleep = (ms) => new Promise((r) => setTimeout(r, ms));
/**
 * Retry a request over transient network failures. Definitive answers —
 * any HTTP response, success or error — are never retried: a 4xx means the
 * server got the request and said no, and replaying it would be wrong.
 */
export async function withRetry(fn, options = {}) {
    const attempts = options.attempts ?? 3;
    const delayMs = options.delayMs ?? 500;
    const sleep = options.sleep ?? defaultSleep;
    let lastError;
    for (let attempt = 1; attempt <= attempts; attempt += 1) {
        try {
            return await fn();
        }
        catch (err) {
            if (!isNetworkError(err))
                throw err;
            lastError = err;
            if (attempt < attempts) {
                options.onRetry?.(attempt, err);
                await sleep(delayMs * attempt);
            }
        }
    }
    throw lastError;
}
