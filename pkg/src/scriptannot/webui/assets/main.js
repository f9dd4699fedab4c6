/**
 * Browser shell: owns the DOM, executes the state machine's effects with
 * the real API client, and re-renders on every transition. All decisions
 * live in state.ts; this file is deliberately thin.
 */
import { ApiClient, ApiError, isNetworkError, withRetry } from "./api.js";
import { renderBusy, renderExhausted, renderFatal, renderNamePrompt, renderPair, renderResults } from "./render.js";
import { canSubmit, initialState, reduce } from "./state.js";
const EVALUATOR_KEY = "evalui.evaluator";
const api = new ApiClient("");
const root = document.getElementById("app");
let state = initialState();
let showingResults = false;
function dispatch(event) {
    const { state: next, effect } = reduce(state, event);
    state = next;
    render();
    if (effect)
        void runEffect(effect);
}
async function runEffect(effect) {
    switch (effect.kind) {
        case "join": {
            try {
                const session = await withRetry(() => api.session(effect.evaluator), {
                    onRetry: () => undefined,
                });
                localStorage.setItem(EVALUATOR_KEY, effect.evaluator);
                dispatch({ kind: "joined", session });
            }
            catch (err) {
                dispatch({ kind: "join_failed", message: describe(err) });
            }
            return;
        }
        case "fetch_pair": {
            try {
                const payload = await withRetry(() => api.nextPair(effect.sessionId));
                if (payload.exhausted) {
                    dispatch({ kind: "pool_exhausted", completed: payload.completed, assigned: payload.assigned });
                }
                else {
                    dispatch({ kind: "pair_loaded", pair: payload });
                }
            }
            catch (err) {
                dispatch({ kind: "load_failed", message: describe(err) });
            }
            return;
        }
        case "submit_vote": {
            try {
                const accepted = await withRetry(() => api.submitVote(effect.vote), {
                    onRetry: (attempt) => dispatch({ kind: "retry_notice", message: `Connection hiccup — retrying (attempt ${attempt + 1})…` }),
                });
                dispatch({ kind: "submit_accepted", completed: accepted.completed, assigned: accepted.assigned });
            }
            catch (err) {
                if (err instanceof ApiError && err.code === "DuplicateVote") {
                    dispatch({ kind: "submit_duplicate" });
                }
                else if (isNetworkError(err)) {
                    dispatch({ kind: "submit_unreachable", message: describe(err) });
                }
                else {
                    dispatch({ kind: "submit_rejected", message: describe(err) });
                }
            }
            return;
        }
    }
}
function describe(err) {
    if (err instanceof ApiError)
        return err.detail;
    if (err instanceof Error)
        return err.message;
    return String(err);
}
function render() {
    if (showingResults)
        return; // results view owns the screen until closed
    switch (state.kind) {
        case "boot":
            root.innerHTML = renderNamePrompt(localStorage.getItem(EVALUATOR_KEY) ?? "");
            wireJoinForm();
            return;
        case "joining":
            root.innerHTML = renderBusy(`Joining as ${state.evaluator}…`);
            return;
        case "loading_pair":
            root.innerHTML = renderBusy("Loading the next pair…");
            return;
        case "reviewing":
            root.innerHTML = renderPair(state);
            wireVoteForm();
            return;
        case "exhausted":
            root.innerHTML = renderExhausted(state.completed, state.assigned);
            document.getElementById("show-results")?.addEventListener("click", () => void openResults());
            return;
        case "fatal":
            root.innerHTML = renderFatal(state.message);
            document.getElementById("reload")?.addEventListener("click", () => location.reload());
            return;
    }
}
function wireJoinForm() {
    const form = document.getElementById("join-form");
    form?.addEventListener("submit", (evt) => {
        evt.preventDefault();
        const input = document.getElementById("evaluator");
        const name = input.value.trim();
        if (name)
            dispatch({ kind: "start", evaluator: name });
    });
}
function wireVoteForm() {
    for (const button of root.querySelectorAll("button.choice")) {
        button.addEventListener("click", () => {
            dispatch({ kind: "choose", choice: button.dataset.choice });
            focusRationaleEnd();
        });
    }
    const rationale = document.getElementById("rationale");
    rationale?.addEventListener("input", () => {
        // Track text without re-rendering so the caret stays put; the next
        // transition re-renders from state and restores this exact text.
        const { state: next } = reduce(state, { kind: "edit_rationale", text: rationale.value });
        state = next;
        syncSubmitDisabled();
    });
    const form = document.getElementById("vote-form");
    form?.addEventListener("submit", (evt) => {
        evt.preventDefault();
        dispatch({ kind: "submit" });
    });
}
function syncSubmitDisabled() {
    const button = document.getElementById("submit-vote");
    if (button)
        button.disabled = !canSubmit(state);
}
function focusRationaleEnd() {
    const rationale = document.getElementById("rationale");
    if (rationale) {
        rationale.focus();
        rationale.setSelectionRange(rationale.value.length, rationale.value.length);
    }
}
async function openResults() {
    showingResults = true;
    root.innerHTML = renderBusy("Loading results…");
    try {
        const payload = await api.results();
        root.innerHTML = renderResults(payload);
    }
    catch (err) {
        root.innerHTML = renderFatal(describe(err));
    }
    document.getElementById("refresh-results")?.addEventListener("click", () => void openResults());
    document.getElementById("back-to-review")?.addEventListener("click", () => {
        showingResults = false;
        render();
    });
    document.getElementById("reload")?.addEventListener("click", () => location.reload());
}
document.getElementById("nav-results")?.addEventListener("click", (evt) => {
    evt.preventDefault();
    void openResults();
});
const saved = localStorage.getItem(EVALUATOR_KEY);
if (saved) {
    // Returning evaluator: rejoin straight away; the server hands back the
    // same session and the first pair without a vote, blinding unchanged.
    dispatch({ kind: "start", evaluator: saved });
}
else {
    render();
}
