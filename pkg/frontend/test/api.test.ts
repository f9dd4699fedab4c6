import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError, isNetworkError, withRetry, type FetchLike } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("requests the session with the evaluator name URL-encoded", async () => {
    const calls: string[] = [];
    const fetchImpl: FetchLike = async (input) => {
      calls.push(input);
      return jsonResponse({ session_id: "s-1", evaluator: "vera cruz", assigned: 20, completed: 0 });
    };
    const client = new ApiClient("", fetchImpl);
    const session = await client.session("vera cruz");
    expect(calls).toEqual(["/api/session?evaluator=vera%20cruz"]);
    expect(session.session_id).toBe("s-1");
    expect(session.assigned).toBe(20);
  });

  it("posts votes as JSON and omits a missing rationale", async () => {
    let captured: { url: string; init?: RequestInit } | null = null;
    const fetchImpl: FetchLike = async (url, init) => {
      captured = { url, init };
      return jsonResponse({ ok: true, completed: 1, assigned: 20 });
    };
    const client = new ApiClient("", fetchImpl);
    await client.submitVote({ session_id: "s-1", pair_id: "pair-00", choice: "A" });
    expect(captured!.url).toBe("/api/votes");
    expect(captured!.init?.method).toBe("POST");
    const body = JSON.parse(String(captured!.init?.body));
    expect(body).toEqual({ session_id: "s-1", pair_id: "pair-00", choice: "A" });
    expect("rationale" in body).toBe(false);
  });

  it("maps service error bodies onto ApiError", async () => {
    const fetchImpl: FetchLike = async () =>
      jsonResponse({ error: "DuplicateVote", detail: "already voted on 'pair-00'" }, 409);
    const client = new ApiClient("", fetchImpl);
    const failure = await client
      .submitVote({ session_id: "s-1", pair_id: "pair-00", choice: "A" })
      .then(() => null)
      .catch((err: unknown) => err);
    expect(failure).toBeInstanceOf(ApiError);
    const apiError = failure as ApiError;
    expect(apiError.status).toBe(409);
    expect(apiError.code).toBe("DuplicateVote");
    expect(apiError.detail).toContain("pair-00");
  });

  it("falls back to the status code when the error body is not JSON", async () => {
    const fetchImpl: FetchLike = async () => new Response("<body of a proxy page>", { status: 502 });
    const client = new ApiClient("", fetchImpl);
    const failure = await client.results().then(
      () => null,
      (err: unknown) => err,
    );
    expect(failure).toBeInstanceOf(ApiError);
    expect((failure as ApiError).code).toBe("HTTP502");
  });
});

describe("isNetworkError", () => {
  it("treats fetch rejections as network errors", () => {
    expect(isNetworkError(new TypeError("fetch failed"))).toBe(true);
  });

  it("never treats a served HTTP error as a network error", () => {
    expect(isNetworkError(new ApiError(409, "DuplicateVote", "dup"))).toBe(false);
  });
});

describe("withRetry", () => {
  it("retries network failures and reports each retry", async () => {
    let attempt = 0;
    const fn = vi.fn(async () => {
      attempt += 1;
      if (attempt < 3) throw new TypeError("fetch failed");
      return "delivered";
    });
    const retries: number[] = [];
    const delays: number[] = [];
    const result = await withRetry(fn, {
      attempts: 3,
      delayMs: 500,
      onRetry: (n) => retries.push(n),
      sleep: async (ms) => {
        delays.push(ms);
      },
    });
    expect(result).toBe("delivered");
    expect(fn).toHaveBeenCalledTimes(3);
    expect(retries).toEqual([1, 2]);
    expect(delays).toEqual([500, 1000]);
  });

  it("never replays a request the server already answered", async () => {
    const fn = vi.fn(async () => {
      throw new ApiError(400, "InvalidChoice", "bad choice");
    });
    await expect(withRetry(fn, { attempts: 3, sleep: async () => {} })).rejects.toBeInstanceOf(ApiError);
    expect(fn).toHaveBeenCalledTimes(1);
  });

  it("gives up with the last error after the final attempt", async () => {
    const fn = vi.fn(async () => {
      throw new TypeError("still down");
    });
    await expect(withRetry(fn, { attempts: 2, sleep: async () => {} })).rejects.toThrow("still down");
    expect(fn).toHaveBeenCalledTimes(2);
  });
});
