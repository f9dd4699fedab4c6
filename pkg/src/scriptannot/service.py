"""Blind A/B evaluation service: sessions, pair serving, vote logging, results.

Evaluators never see which model produced which summary — position blinding
is a seeded per-(evaluator, pair) coin, applied when a pair is served and
undone only server-side when the vote is appended to the log.  The vote log
is append-only JSONL, fsynced per vote, and is the single source of truth:
restarting the service rebuilds all session progress from it.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import (
    DuplicateVote,
    InvalidChoice,
    NoDecisiveVotes,
    PipelineError,
    UnknownPair,
    UnknownSession,
)
from .evalstats import CHOICES, EvalPair, PairwiseVote, win_rate
from .util import json_line, stable_bits, stable_hex

DEFAULT_PAIRS_PER_SESSION = 20
DEFAULT_CANDIDATES = ("model_1", "model_2")

_STATUS_BY_ERROR = {
    "UnknownSession": 404,
    "UnknownPair": 404,
    "DuplicateVote": 409,
    "InvalidChoice": 400,
}


def load_pair_pool(path: Path | str) -> list[EvalPair]:
    """Read the evaluation pool: JSONL of pair_id, script, summary_1, summary_2."""
    pairs: list[EvalPair] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append(
                EvalPair(
                    pair_id=str(obj["pair_id"]),
                    script=obj.get("script", ""),
                    summary_1=obj["summary_1"],
                    summary_2=obj["summary_2"],
                )
            )
    return pairs


@dataclass
class _Session:
    session_id: str
    evaluator: str
    assigned: list  # ordered pair ids


class EvalService:
    """All service state and operations, independent of the web framework."""

    def __init__(
        self,
        pool: Sequence[EvalPair],
        vote_log: Path | str,
        *,
        candidates: Sequence[str] = DEFAULT_CANDIDATES,
        pairs_per_session: int = DEFAULT_PAIRS_PER_SESSION,
        seed: int = 0,
    ) -> None:
        if len(candidates) != 2 or candidates[0] == candidates[1]:
            raise ValueError("candidates must be two distinct ids")
        self.pool = {p.pair_id: p for p in pool}
        self.candidates = (str(candidates[0]), str(candidates[1]))
        self.pairs_per_session = pairs_per_session
        self.seed = seed
        self.vote_log = Path(vote_log)
        self._lock = threading.Lock()
        self._sessions: dict[str, _Session] = {}
        self._votes: list[dict] = []
        self._completed: set[tuple[str, str]] = set()  # (evaluator, pair_id)
        self._load_log()
        self.vote_log.parent.mkdir(parents=True, exist_ok=True)
        self._log_fh = open(self.vote_log, "a", encoding="utf-8")

    # -- log ------------------------------------------------------------------

    def _load_log(self) -> None:
        if not self.vote_log.is_file():
            return
        with open(self.vote_log, encoding="utf-8") as fh:
            lines = fh.readlines()
        for idx, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                if idx == len(lines) - 1:
                    break  # torn final append; the vote never completed
                raise
            self._votes.append(obj)
            self._completed.add((obj["evaluator"], obj["pair_id"]))

    def _append_vote(self, obj: dict) -> None:
        self._log_fh.write(json_line(obj) + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def close(self) -> None:
        self._log_fh.close()

    # -- sessions ----------------------------------------------------------------

    def join_session(self, evaluator: str) -> dict:
        """Create or resume the evaluator's session; same evaluator, same session."""
        evaluator = evaluator.strip()
        if not evaluator:
            raise InvalidChoice("evaluator must be non-empty")
        session_id = "s-" + stable_hex("session", self.seed, evaluator)[:16]
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                ordered = sorted(self.pool, key=lambda pid: (stable_bits("assign", self.seed, evaluator, pid), pid))
                session = _Session(
                    session_id=session_id, evaluator=evaluator, assigned=ordered[: self.pairs_per_session]
                )
                self._sessions[session_id] = session
            completed = sum(1 for pid in session.assigned if (evaluator, pid) in self._completed)
        return {
            "session_id": session.session_id,
            "evaluator": evaluator,
            "assigned": len(session.assigned),
            "completed": completed,
        }

    def _session(self, session_id: str) -> _Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def _blinding_bit(self, evaluator: str, pair_id: str) -> int:
        return stable_bits("blind", self.seed, evaluator, pair_id) % 2

    def next_pair(self, session_id: str) -> dict:
        """The next unvoted pair with blinded summaries; idempotent until voted on."""
        with self._lock:
            session = self._session(session_id)
            completed = [pid for pid in session.assigned if (session.evaluator, pid) in self._completed]
            pending = [pid for pid in session.assigned if (session.evaluator, pid) not in self._completed]
            progress = {"completed": len(completed), "assigned": len(session.assigned)}
            if not pending:
                return {"exhausted": True, **progress}
            pair = self.pool[pending[0]]
            bit = self._blinding_bit(session.evaluator, pair.pair_id)
            summary_a, summary_b = (
                (pair.summary_1, pair.summary_2) if bit == 0 else (pair.summary_2, pair.summary_1)
            )
        return {
            "exhausted": False,
            "pair_id": pair.pair_id,
            "script": pair.script,
            "summary_a": summary_a,
            "summary_b": summary_b,
            **progress,
        }

    def submit_vote(self, session_id: str, pair_id: str, choice: str, rationale: str | None = None) -> dict:
        """Validate, de-blind, and durably append one vote."""
        if choice not in CHOICES:
            raise InvalidChoice(f"choice must be one of {CHOICES}")
        if choice == "equal" and not (rationale or "").strip():
            raise InvalidChoice("an equal vote needs a non-empty rationale")
        with self._lock:
            session = self._session(session_id)
            if pair_id not in session.assigned:
                raise UnknownPair(f"pair {pair_id!r} is not assigned to this session")
            key = (session.evaluator, pair_id)
            if key in self._completed:
                raise DuplicateVote(f"already voted on {pair_id!r}")
            bit = self._blinding_bit(session.evaluator, pair_id)
            shown_a = self.candidates[bit]
            shown_b = self.candidates[1 - bit]
            winner = None if choice == "equal" else (shown_a if choice == "A" else shown_b)
            obj = {
                "seq": len(self._votes) + 1,
                "pair_id": pair_id,
                "evaluator": session.evaluator,
                "choice": choice,
                "blinding": shown_a,
                "winner": winner,
                "rationale": rationale,
            }
            self._append_vote(obj)
            self._votes.append(obj)
            self._completed.add(key)
            completed = sum(1 for pid in session.assigned if (session.evaluator, pid) in self._completed)
        return {"ok": True, "completed": completed, "assigned": len(session.assigned)}

    # -- results -----------------------------------------------------------------

    def results(self) -> dict:
        """Aggregate win rates over a snapshot of the vote log, without identities."""
        with self._lock:
            votes = [
                PairwiseVote(
                    pair_id=v["pair_id"],
                    evaluator=v["evaluator"],
                    choice=v["choice"],
                    blinding=v["blinding"],
                    rationale=v.get("rationale"),
                )
                for v in self._votes
            ]
        equals = sum(1 for v in votes if v.choice == "equal")
        base = {"votes_total": len(votes), "equals": equals}
        try:
            rates = win_rate(votes, self.candidates)
        except NoDecisiveVotes:
            return {
                **base,
                "no_decisive": True,
                "decisive": 0,
                "wins_a": 0,
                "wins_b": 0,
                "rate_a": None,
                "rate_b": None,
                "per_evaluator": self._per_evaluator(votes),
            }
        return {
            **base,
            "no_decisive": False,
            "decisive": rates.decisive,
            "wins_a": rates.wins_a,
            "wins_b": rates.wins_b,
            "rate_a": rates.rate_a,
            "rate_b": rates.rate_b,
            "per_evaluator": self._per_evaluator(votes),
        }

    def _per_evaluator(self, votes: list[PairwiseVote]) -> list[dict]:
        from .evalstats import vote_winner

        rows: dict[str, dict] = {}
        for vote in votes:
            row = rows.setdefault(
                vote.evaluator, {"evaluator": vote.evaluator, "votes": 0, "wins_a": 0, "wins_b": 0, "equals": 0}
            )
            row["votes"] += 1
            winner = vote_winner(vote, self.candidates)
            if winner is None:
                row["equals"] += 1
            elif winner == self.candidates[0]:
                row["wins_a"] += 1
            else:
                row["wins_b"] += 1
        return [rows[name] for name in sorted(rows)]


def _default_static_dir() -> Path | None:
    try:
        candidate = Path(str(resources.files(__package__) / "webui"))
    except (ModuleNotFoundError, TypeError):  # pragma: no cover - packaging edge
        return None
    return candidate if candidate.is_dir() else None


def create_app(
    pool: Sequence[EvalPair],
    vote_log: Path | str,
    *,
    candidates: Sequence[str] = DEFAULT_CANDIDATES,
    pairs_per_session: int = DEFAULT_PAIRS_PER_SESSION,
    seed: int = 0,
    static_dir: Path | str | None = None,
    filter_report_path: Path | str | None = None,
):
    """Build the FastAPI app around an EvalService instance."""
    from fastapi import FastAPI, Request
    from fastapi.responses import HTMLResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles

    service = EvalService(
        pool, vote_log, candidates=candidates, pairs_per_session=pairs_per_session, seed=seed
    )
    app = FastAPI(title="scriptannot eval", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.exception_handler(PipelineError)
    async def _domain_error(request: Request, exc: PipelineError):
        status = _STATUS_BY_ERROR.get(exc.code, 400)
        return JSONResponse(status_code=status, content={"error": exc.code, "detail": str(exc)})

    @app.get("/api/session")
    async def get_session(evaluator: str = ""):
        return service.join_session(evaluator)

    @app.get("/api/pairs/next")
    async def get_next_pair(session: str = ""):
        return service.next_pair(session)

    @app.post("/api/votes")
    async def post_vote(payload: dict):
        return service.submit_vote(
            session_id=str(payload.get("session_id", "")),
            pair_id=str(payload.get("pair_id", "")),
            choice=str(payload.get("choice", "")),
            rationale=payload.get("rationale"),
        )

    @app.get("/api/results")
    async def get_results():
        return service.results()

    @app.get("/api/reports/filter")
    async def get_filter_report():
        if filter_report_path is None or not Path(filter_report_path).is_file():
            return JSONResponse(status_code=404, content={"error": "NotFound", "detail": "no filter report configured"})
        return json.loads(Path(filter_report_path).read_text(encoding="utf-8"))

    resolved_static = Path(static_dir) if static_dir is not None else _default_static_dir()
    if resolved_static is not None and resolved_static.is_dir():
        app.mount("/", StaticFiles(directory=str(resolved_static), html=True), name="ui")
    else:  # pragma: no cover - exercised only before the UI assets are built

        @app.get("/", response_class=HTMLResponse)
        async def index():
            return "<!doctype html><title>scriptannot eval</title><p>UI assets are not installed.</p>"

    return app
