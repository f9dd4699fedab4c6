/**
 * HTML builders for every screen. Pure string-in/string-out so they can be
 * tested without a browser; the shell assigns the result to a container's
 * innerHTML and wires events by element id.
 *
 * Scripts and summaries are untrusted text straight from the corpus, so
 * everything interpolated here goes through escapeHtml.
 */

import { formatProgress, formatRate, summarizeResults } from "./format.js";
import type { State } from "./state.js";
import type { ResultsPayload } from "./types.js";
import { voteProblem } from "./validate.js";
import { canSubmit } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function choiceButton(value: "A" | "B" | "equal", label: string, selected: boolean, disabled: boolean): string {
  const pressed = selected ? "true" : "false";
  return (
    `<button type="button" class="choice${selected ? " selected" : ""}" ` +
    `data-choice="${value}" aria-pressed="${pressed}"${disabled ? " disabled" : ""}>${label}</button>`
  );
}

export function renderNamePrompt(defaultName: string): string {
  return `
<section class="card join-card">
  <h2>Join a review session</h2>
  <p>Votes are recorded under this name. Using the same name later resumes
  the same session at the first unvoted pair.</p>
  <form id="join-form">
    <label for="evaluator">Evaluator name</label>
    <input id="evaluator" name="evaluator" autocomplete="off" required
           value="${escapeHtml(defaultName)}" placeholder="e.g. vera">
    <button type="submit" id="join">Start reviewing</button>
  </form>
</section>`;
}

export function renderBusy(message: string): string {
  return `<section class="card busy"><p>${escapeHtml(message)}</p></section>`;
}

export function renderFatal(message: string): string {
  return `
<section class="card fatal">
  <h2>Something went wrong</h2>
  <p>${escapeHtml(message)}</p>
  <button type="button" id="reload">Reload</button>
</section>`;
}

/**
 * The pair under review: the script (read-only, monospaced, collapsible)
 * and the two blinded summaries. Position letters A/B are the only
 * attribution shown anywhere — model names and iteration numbers are not
 * part of the payload, and none are rendered.
 */
export function renderPair(state: State): string {
  if (state.kind !== "reviewing") return "";
  const { pair, choice, rationale, submitting, error, notice } = state;
  const problem = voteProblem(choice, rationale);
  const submitDisabled = !canSubmit(state);
  const needsRationale = choice === "equal";
  return `
<section class="pair" data-pair-id="${escapeHtml(pair.pair_id)}">
  <header class="pair-header">
    <span class="pair-id">${escapeHtml(pair.pair_id)}</span>
    <span class="progress" id="progress">${formatProgress(pair.completed, pair.assigned)} completed</span>
  </header>

  <details class="script-panel" open>
    <summary>Script under review</summary>
    <pre class="script" tabindex="0"><code>${escapeHtml(pair.script)}</code></pre>
  </details>

  <div class="summaries">
    <article class="summary" data-position="A">
      <h3>Summary A</h3>
      <p>${escapeHtml(pair.summary_a)}</p>
    </article>
    <article class="summary" data-position="B">
      <h3>Summary B</h3>
      <p>${escapeHtml(pair.summary_b)}</p>
    </article>
  </div>

  <form id="vote-form" class="vote">
    <fieldset class="choices"${submitting ? " disabled" : ""}>
      <legend>Which summary is better?</legend>
      ${choiceButton("A", "A is better", choice === "A", submitting)}
      ${choiceButton("equal", "Equally good", choice === "equal", submitting)}
      ${choiceButton("B", "B is better", choice === "B", submitting)}
    </fieldset>
    <label for="rationale">Rationale${needsRationale ? " (required for an equal vote)" : " (optional)"}</label>
    <textarea id="rationale" rows="3"${submitting ? " disabled" : ""}
      placeholder="What decided it?">${escapeHtml(rationale)}</textarea>
    ${error ? `<p class="error" role="alert">${escapeHtml(error)}</p>` : ""}
    ${notice ? `<p class="notice" role="status">${escapeHtml(notice)}</p>` : ""}
    <button type="submit" id="submit-vote"${submitDisabled ? " disabled" : ""}>
      ${submitting ? "Submitting…" : "Submit vote"}
    </button>
    ${!submitting && problem && choice !== null ? `<p class="hint">${escapeHtml(problem)}</p>` : ""}
  </form>
</section>`;
}

export function renderExhausted(completed: number, assigned: number): string {
  return `
<section class="card done">
  <h2>All done — thank you!</h2>
  <p class="progress">${formatProgress(completed, assigned)} pairs completed.</p>
  <p>Every pair assigned to this session has a vote. You can close this tab
  or look at the running results.</p>
  <button type="button" id="show-results">View results</button>
</section>`;
}

/** Aggregate results: win rates by position, equals, per-evaluator rows. */
export function renderResults(results: ResultsPayload): string {
  const summary = summarizeResults(results);
  if (summary.empty) {
    return `
<section class="card results empty">
  <h2>Results</h2>
  <p class="empty-state">${escapeHtml(summary.headline)}</p>
  ${summary.equalsNote ? `<p>${escapeHtml(summary.equalsNote)}</p>` : ""}
  <button type="button" id="refresh-results">Refresh</button>
</section>`;
  }
  const rows = results.per_evaluator
    .map(
      (row) => `
      <tr>
        <td>${escapeHtml(row.evaluator)}</td>
        <td>${row.votes}</td>
        <td>${row.wins_a}</td>
        <td>${row.wins_b}</td>
        <td>${row.equals}</td>
      </tr>`,
    )
    .join("");
  return `
<section class="card results">
  <h2>Results</h2>
  <p class="headline">${escapeHtml(summary.headline)}</p>
  <p>${escapeHtml(summary.equalsNote)}</p>
  <table class="rates">
    <thead><tr><th></th><th>Wins</th><th>Win rate</th></tr></thead>
    <tbody>
      <tr><td>Position A</td><td>${results.wins_a}</td><td>${formatRate(results.rate_a)}</td></tr>
      <tr><td>Position B</td><td>${results.wins_b}</td><td>${formatRate(results.rate_b)}</td></tr>
    </tbody>
  </table>
  <p>${results.decisive} decisive vote${results.decisive === 1 ? "" : "s"} of ${results.votes_total} total.</p>
  <h3>Per evaluator</h3>
  <table class="per-evaluator">
    <thead><tr><th>Evaluator</th><th>Votes</th><th>A wins</th><th>B wins</th><th>Equals</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>
  <button type="button" id="refresh-results">Refresh</button>
  <button type="button" id="back-to-review">Back to review</button>
</section>`;
}
