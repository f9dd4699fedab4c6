/** Client-side vote validation, mirroring the server's acceptance rules. */

import type { Choice } from "./types.js";

/**
 * Why this vote cannot be submitted yet, or null when it can.
 *
 * "equal" is the one choice whose preference signal is empty, so it must be
 * backed by a non-blank rationale; A and B stand on their own.
 */
export function voteProblem(choice: Choice | null, rationale: string): string | null {
  if (choice === null) return "Pick A, B, or equal first.";
  if (choice === "equal" && rationale.trim() === "") {
    return "An equal vote needs a rationale.";
  }
  return null;
}

/** Trimmed rationale, or undefined when blank (the wire format omits it). */
export function rationaleForWire(rationale: string): string | undefined {
  const trimmed = rationale.trim();
  return trimmed === "" ? undefined : trimmed;
}
