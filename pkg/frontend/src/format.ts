/** Text formatting for the results display. */

import type { ResultsPayload } from "./types.js";

/** "50.47%" — server rates arrive rounded to two decimals already. */
export function formatRate(rate: number | null): string {
  return rate === null ? "—" : `${rate.toFixed(2)}%`;
}

/** Progress counter, e.g. "3 / 20". */
export function formatProgress(completed: number, assigned: number): string {
  return `${completed} / ${assigned}`;
}

export interface ResultsSummary {
  empty: boolean;
  headline: string;
  equalsNote: string;
}

/** Headline strings for the results view. */
export function summarizeResults(results: ResultsPayload): ResultsSummary {
  if (results.no_decisive || results.decisive === 0) {
    return {
      empty: true,
      headline: "No decisive votes yet.",
      equalsNote:
        results.equals > 0
          ? `${results.equals} equal vote${results.equals === 1 ? "" : "s"} so far.`
          : "",
    };
  }
  return {
    empty: false,
    headline:
      `Position A ${formatRate(results.rate_a)} (${results.wins_a} wins) · ` +
      `Position B ${formatRate(results.rate_b)} (${results.wins_b} wins)`,
    equalsNote: `${results.equals} equal vote${results.equals === 1 ? "" : "s"} excluded from the rates.`,
  };
}
