/** Wire types for the review service API. */

export type Choice = "A" | "B" | "equal";

/** GET /api/session?evaluator=<name> */
export interface SessionInfo {
  session_id: string;
  evaluator: string;
  assigned: number;
  completed: number;
}

/** GET /api/pairs/next?session=<id> when work remains. */
export interface PairPayload {
  exhausted: false;
  pair_id: string;
  script: string;
  summary_a: string;
  summary_b: string;
  completed: number;
  assigned: number;
}

/** GET /api/pairs/next?session=<id> when every assigned pair is voted. */
export interface ExhaustedPayload {
  exhausted: true;
  completed: number;
  assigned: number;
}

export type NextPairPayload = PairPayload | ExhaustedPayload;

/** POST /api/votes request body. */
export interface VoteRequest {
  session_id: string;
  pair_id: string;
  choice: Choice;
  rationale?: string;
}

/** POST /api/votes success body. */
export interface VoteAccepted {
  ok: true;
  completed: number;
  assigned: number;
}

/** One row of the per-evaluator breakdown in the results payload. */
export interface EvaluatorRow {
  evaluator: string;
  votes: number;
  wins_a: number;
  wins_b: number;
  equals: number;
}

/**
 * GET /api/results. Rates are percentages already rounded to two decimals
 * by the server, or null when no decisive vote exists yet. Candidate
 * identities are never part of the payload; positions are reported as A/B.
 */
export interface ResultsPayload {
  votes_total: number;
  equals: number;
  no_decisive: boolean;
  decisive: number;
  wins_a: number;
  wins_b: number;
  rate_a: number | null;
  rate_b: number | null;
  per_evaluator: EvaluatorRow[];
}

/** Error body the service sends with non-2xx statuses. */
export interface ErrorPayload {
  error: string;
  detail: string;
}
