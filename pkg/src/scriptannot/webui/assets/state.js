/**
 * Session state machine for the review flow.
 *
 * Pure: `reduce(state, event)` returns the next state plus at most one
 * effect for the shell to execute. All review state that matters lives
 * here, which is what makes the flow's guarantees testable:
 *
 *  - a vote is submitted at most once per pair (double click, back, and
 *    refresh all collapse into the same guarded transition);
 *  - a rejected submission keeps the evaluator's rationale on screen;
 *  - a DuplicateVote conflict is not an error — someone already voted on
 *    this pair (another tab, a replayed request), so advance silently.
 */
import { rationaleForWire, voteProblem } from "./validate.js";
const step = (state, effect = null) => ({ state, effect });
function reviewing(session, pair) {
    return {
        kind: "reviewing",
        session,
        pair,
        choice: null,
        rationale: "",
        submitting: false,
        error: null,
        notice: null,
    };
}
/** Whether the submit control should be live for this state. */
export function canSubmit(state) {
    return (state.kind === "reviewing" &&
        !state.submitting &&
        voteProblem(state.choice, state.rationale) === null);
}
export function initialState() {
    return { kind: "boot" };
}
export function reduce(state, event) {
    switch (event.kind) {
        case "start":
            return step({ kind: "joining", evaluator: event.evaluator }, { kind: "join", evaluator: event.evaluator });
        case "joined":
            if (state.kind !== "joining")
                return step(state);
            return step({ kind: "loading_pair", session: event.session }, { kind: "fetch_pair", sessionId: event.session.session_id });
        case "join_failed":
            if (state.kind !== "joining")
                return step(state);
            return step({ kind: "fatal", message: event.message });
        case "pair_loaded":
            if (state.kind !== "loading_pair")
                return step(state);
            return step(reviewing(state.session, event.pair));
        case "pool_exhausted":
            if (state.kind !== "loading_pair")
                return step(state);
            return step({
                kind: "exhausted",
                session: state.session,
                completed: event.completed,
                assigned: event.assigned,
            });
        case "load_failed":
            if (state.kind !== "loading_pair")
                return step(state);
            return step({ kind: "fatal", message: event.message });
        case "choose":
            if (state.kind !== "reviewing" || state.submitting)
                return step(state);
            return step({ ...state, choice: event.choice, error: null });
        case "edit_rationale":
            if (state.kind !== "reviewing" || state.submitting)
                return step(state);
            return step({ ...state, rationale: event.text });
        case "submit": {
            if (!canSubmit(state) || state.kind !== "reviewing")
                return step(state);
            const vote = {
                session_id: state.session.session_id,
                pair_id: state.pair.pair_id,
                choice: state.choice,
            };
            const rationale = rationaleForWire(state.rationale);
            if (rationale !== undefined)
                vote.rationale = rationale;
            return step({ ...state, submitting: true, error: null, notice: null }, { kind: "submit_vote", vote });
        }
        case "submit_accepted":
            if (state.kind !== "reviewing" || !state.submitting)
                return step(state);
            return step({ kind: "loading_pair", session: { ...state.session, completed: event.completed } }, { kind: "fetch_pair", sessionId: state.session.session_id });
        case "submit_duplicate":
            // The server already holds a vote for this pair; move on without noise.
            if (state.kind !== "reviewing" || !state.submitting)
                return step(state);
            return step({ kind: "loading_pair", session: state.session }, { kind: "fetch_pair", sessionId: state.session.session_id });
        case "submit_rejected":
            if (state.kind !== "reviewing" || !state.submitting)
                return step(state);
            return step({ ...state, submitting: false, error: event.message, notice: null });
        case "submit_unreachable":
            if (state.kind !== "reviewing" || !state.submitting)
                return step(state);
            return step({
                ...state,
                submitting: false,
                error: `Could not reach the server: ${event.message}. Your vote was not recorded — try again.`,
                notice: null,
            });
        case "retry_notice":
            if (state.kind !== "reviewing")
                return step(state);
            return step({ ...state, notice: event.message });
    }
}
