"""Evaluation statistics: accuracy tables, McNemar's test, win rates, pairwise judging.

Everything here is exact integer counting plus a thin layer of presentation
rounding (two decimals, ties rounded half-up) so results are reproducible to
the digit across runs and platforms.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .backends import Backend, GenerationRequest, ModelHandle, make_backend, parse_pairwise_verdict, render_prompt
from .corpus import LANGUAGES, Dataset
from .errors import (
    EmptyIntersection,
    InvalidField,
    MissingTruth,
    NoDecisiveVotes,
    Transport,
)
from .util import percent, ratio_round

# -- accuracy -----------------------------------------------------------------

FACETS = ("malicious", "language")


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts for the malicious facet."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def correct(self) -> int:
        return self.tp + self.tn

    def accuracy_percent(self) -> float:
        return percent(self.correct, self.total)


@dataclass(frozen=True)
class LanguageAccuracy:
    correct: int
    total: int

    def percent(self) -> float | None:
        return percent(self.correct, self.total) if self.total else None


@dataclass(frozen=True)
class AccuracyResult:
    """Overall, per-language, and macro accuracy for one facet."""

    facet: str
    correct: int
    total: int
    micro_percent: float
    macro_percent: float | None
    per_language: dict  # language -> LanguageAccuracy, zero-filled
    confusion: ConfusionCounts | None = None

    def to_json_dict(self) -> dict:
        return {
            "facet": self.facet,
            "correct": self.correct,
            "total": self.total,
            "micro_percent": self.micro_percent,
            "macro_percent": self.macro_percent,
            "per_language": {
                lang: {"correct": acc.correct, "total": acc.total, "percent": acc.percent()}
                for lang, acc in self.per_language.items()
            },
            "confusion": None
            if self.confusion is None
            else {"tp": self.confusion.tp, "tn": self.confusion.tn, "fp": self.confusion.fp, "fn": self.confusion.fn},
        }

    def render_text(self) -> str:
        lines = [
            f"facet: {self.facet}",
            f"{'language':<10}{'correct':>9}{'total':>8}{'accuracy':>10}",
        ]
        for lang in LANGUAGES:
            acc = self.per_language[lang]
            pct = acc.percent()
            lines.append(f"{lang:<10}{acc.correct:>9}{acc.total:>8}{('-' if pct is None else f'{pct:.2f}%'):>10}")
        lines.append(f"{'micro':<10}{self.correct:>9}{self.total:>8}{self.micro_percent:>9.2f}%")
        macro = "-" if self.macro_percent is None else f"{self.macro_percent:.2f}%"
        lines.append(f"{'macro':<10}{'':>9}{'':>8}{macro:>10}")
        return "\n".join(lines)


def accuracy(predictions: Dataset, truth: Dataset, facet: str = "malicious") -> AccuracyResult:
    """Score predictions against ground truth on one facet.

    Every predicted sha must exist in the truth set.  The per-language table is
    bucketed by the ground-truth language and zero-filled for all languages;
    micro averages over records, macro averages the per-language rates of
    languages that have any records.
    """
    if facet not in FACETS:
        raise InvalidField("facet", f"{facet!r} not one of {FACETS}")
    if len(predictions) == 0:
        raise EmptyIntersection("no predictions to score")
    lang_counts = {lang: [0, 0] for lang in LANGUAGES}  # [correct, total]
    tp = tn = fp = fn = 0
    for pred in predictions:
        true = truth.get(pred.sha256)
        if true is None:
            raise MissingTruth(pred.sha256)
        if facet == "malicious":
            ok = pred.malicious == true.malicious
            if true.malicious:
                tp, fn = (tp + 1, fn) if ok else (tp, fn + 1)
            else:
                tn, fp = (tn + 1, fp) if ok else (tn, fp + 1)
        else:
            ok = pred.language == true.language
        bucket = lang_counts[true.language]
        bucket[0] += int(ok)
        bucket[1] += 1
    correct = sum(c for c, _ in lang_counts.values())
    total = sum(t for _, t in lang_counts.values())
    populated = [Fraction(c, t) for c, t in lang_counts.values() if t]
    macro: float | None = None
    if populated:
        mean = sum(populated, Fraction(0)) / len(populated)
        macro = ratio_round(mean.numerator * 100, mean.denominator)
    return AccuracyResult(
        facet=facet,
        correct=correct,
        total=total,
        micro_percent=percent(correct, total),
        macro_percent=macro,
        per_language={lang: LanguageAccuracy(correct=c, total=t) for lang, (c, t) in lang_counts.items()},
        confusion=ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn) if facet == "malicious" else None,
    )


# -- McNemar --------------------------------------------------------------------


@dataclass(frozen=True)
class McNemarResult:
    """Discordant-pair counts and the test statistic over them."""

    b: int
    c: int
    chi_square: float
    p_value: float
    degenerate: bool = False

    def to_json_dict(self) -> dict:
        return {
            "b": self.b,
            "c": self.c,
            "chi_square": self.chi_square,
            "p_value": self.p_value,
            "degenerate": self.degenerate,
        }


def chi_square_p_value(statistic: float) -> float:
    """Survival probability of a chi-square variable with one degree of freedom."""
    if statistic < 0:
        raise ValueError("chi-square statistic cannot be negative")
    return math.erfc(math.sqrt(statistic / 2.0))


def mcnemar_from_counts(b: int, c: int) -> McNemarResult:
    """McNemar's test without continuity correction from discordant counts.

    b+c == 0 has no discordant information; that case returns the degenerate
    result (statistic 0, p 1) rather than raising.
    """
    if b < 0 or c < 0:
        raise ValueError("discordant counts cannot be negative")
    if b + c == 0:
        return McNemarResult(b=b, c=c, chi_square=0.0, p_value=1.0, degenerate=True)
    statistic = (b - c) ** 2 / (b + c)
    return McNemarResult(b=b, c=c, chi_square=statistic, p_value=chi_square_p_value(statistic))


def mcnemar(predictions_a: Dataset, predictions_b: Dataset, truth: Dataset) -> McNemarResult:
    """Paired label-discordance test between two prediction sets.

    b counts shas predicted malicious by A but benign by B; c the converse.
    Both sets are compared on their common shas, each of which must have a
    ground-truth record.
    """
    common = [sha for sha in predictions_a.shas if sha in predictions_b]
    if not common:
        raise EmptyIntersection("prediction sets share no sha256s")
    b = c = 0
    for sha in common:
        if truth.get(sha) is None:
            raise MissingTruth(sha)
        a_mal = predictions_a.get(sha).malicious
        b_mal = predictions_b.get(sha).malicious
        if a_mal and not b_mal:
            b += 1
        elif b_mal and not a_mal:
            c += 1
    return mcnemar_from_counts(b, c)


# -- pairwise votes and win rates -------------------------------------------------

CHOICES = ("A", "B", "equal")


@dataclass(frozen=True)
class PairwiseVote:
    """One blind A/B judgment.

    `blinding` names the candidate that was shown in position A; it is
    bookkeeping for de-blinding and is never exposed to the voter.  A choice
    of "equal" is reserved for human evaluators — the LLM path never emits it.
    """

    pair_id: str
    evaluator: str
    choice: str
    blinding: str
    rationale: str | None = None

    def __post_init__(self) -> None:
        if self.choice not in CHOICES:
            raise InvalidField("choice", f"{self.choice!r} not one of {CHOICES}")
        if not self.pair_id:
            raise InvalidField("pair_id", "must be non-empty")
        if not self.blinding:
            raise InvalidField("blinding", "must be non-empty")


def vote_winner(vote: PairwiseVote, candidates: Sequence[str]) -> str | None:
    """De-blind one vote to the winning candidate id; None for an equal vote."""
    if vote.choice == "equal":
        return None
    first, second = candidates
    shown_b = second if vote.blinding == first else first
    return vote.blinding if vote.choice == "A" else shown_b


@dataclass(frozen=True)
class WinRateResult:
    """Win counts and percentage rates over decisive (non-equal) votes."""

    candidate_a: str
    candidate_b: str
    wins_a: int
    wins_b: int
    equals: int
    rate_a: float
    rate_b: float

    @property
    def decisive(self) -> int:
        return self.wins_a + self.wins_b

    def to_json_dict(self) -> dict:
        return {
            "candidate_a": self.candidate_a,
            "candidate_b": self.candidate_b,
            "wins_a": self.wins_a,
            "wins_b": self.wins_b,
            "equals": self.equals,
            "decisive": self.decisive,
            "rate_a": self.rate_a,
            "rate_b": self.rate_b,
        }


def win_rate(votes: Iterable[PairwiseVote], candidates: Sequence[str] | None = None) -> WinRateResult:
    """Aggregate blind votes into per-candidate win rates.

    Equal votes are excluded from the denominator.  When `candidates` is not
    given, the ordered pair is inferred from the blinding fields (sorted); it
    must name exactly two candidates.
    """
    votes = list(votes)
    if candidates is None:
        seen = sorted({v.blinding for v in votes})
        if len(seen) != 2:
            raise NoDecisiveVotes("cannot infer the candidate pair from these votes")
        candidates = (seen[0], seen[1])
    first, second = candidates
    wins = {first: 0, second: 0}
    equals = 0
    for vote in votes:
        winner = vote_winner(vote, candidates)
        if winner is None:
            equals += 1
        else:
            wins[winner] += 1
    decisive = wins[first] + wins[second]
    if decisive == 0:
        raise NoDecisiveVotes("every vote was a tie")
    return WinRateResult(
        candidate_a=first,
        candidate_b=second,
        wins_a=wins[first],
        wins_b=wins[second],
        equals=equals,
        rate_a=percent(wins[first], decisive),
        rate_b=percent(wins[second], decisive),
    )


# -- LLM pairwise evaluation --------------------------------------------------------


@dataclass(frozen=True)
class EvalPair:
    """One script with the two candidates' summaries, in candidate order."""

    pair_id: str
    script: str
    summary_1: str
    summary_2: str


@dataclass(frozen=True)
class PairwiseEvalResult:
    votes: tuple
    skipped_pairs: tuple  # pair ids whose verdicts never parsed

    @property
    def skipped(self) -> int:
        return len(self.skipped_pairs)


def blinding_bit(seed: int, pair_id: str) -> int:
    """Seeded coin deciding which candidate takes position A for a pair."""
    from .util import stable_bits

    return stable_bits("blind", seed, pair_id) % 2


def pairwise_llm_eval(
    pairs: Iterable[EvalPair],
    judge: ModelHandle,
    *,
    seed: int = 0,
    candidates: Sequence[str] = ("model_1", "model_2"),
    backend: Backend | None = None,
    workers: int = 1,
    prompts_dir=None,
) -> PairwiseEvalResult:
    """Run blind forced-choice A/B judging over summary pairs.

    Position assignment is a seeded per-pair coin flip; the judge never sees
    candidate identities.  Unreadable verdicts skip the pair (tallied in
    `skipped_pairs`) rather than inventing a vote.  Votes come back sorted by
    pair_id.
    """
    judge_backend = backend or make_backend(judge)
    pairs = list(pairs)

    def _judge_one(pair: EvalPair) -> PairwiseVote | None:
        bit = blinding_bit(seed, pair.pair_id)
        summary_a, summary_b = (pair.summary_1, pair.summary_2) if bit == 0 else (pair.summary_2, pair.summary_1)
        prompt = render_prompt(
            "judge_pairwise",
            {"script": pair.script, "summary_a": summary_a, "summary_b": summary_b},
            prompts_dir,
        )
        try:
            completion = judge_backend.complete(
                judge, GenerationRequest(prompt=prompt, temperature=0.0, max_output_tokens=64, seed=seed)
            )
        except Transport:
            return None
        choice = parse_pairwise_verdict(completion.text)
        if choice is None:
            return None
        return PairwiseVote(
            pair_id=pair.pair_id,
            evaluator=judge.identifier,
            choice=choice,
            blinding=candidates[bit],
            rationale=completion.text,
        )

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_judge_one, pairs))
    else:
        outcomes = [_judge_one(p) for p in pairs]

    votes = [v for v in outcomes if v is not None]
    skipped = tuple(p.pair_id for p, v in zip(pairs, outcomes) if v is None)
    votes.sort(key=lambda v: v.pair_id)
    return PairwiseEvalResult(votes=tuple(votes), skipped_pairs=skipped)


# -- phrase overlap -------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapTable:
    """How many records in each corpus contain each phrase (once per record)."""

    phrases: tuple
    corpora: tuple
    counts: dict = field(default_factory=dict)  # phrase -> {corpus: count}

    def to_json_dict(self) -> dict:
        return {"phrases": list(self.phrases), "corpora": list(self.corpora), "counts": self.counts}

    def render_text(self) -> str:
        width = max([len(p) for p in self.phrases] + [6])
        header = f"{'phrase':<{width}}" + "".join(f"{c:>12}" for c in self.corpora)
        lines = [header]
        for phrase in self.phrases:
            lines.append(f"{phrase:<{width}}" + "".join(f"{self.counts[phrase][c]:>12}" for c in self.corpora))
        return "\n".join(lines)


def phrase_overlap(phrases: Sequence[str], corpora: Mapping[str, Dataset]) -> OverlapTable:
    """Count, per corpus, the records whose summary contains each phrase.

    Matching is case-sensitive substring; a record counts at most once per
    phrase no matter how often the phrase repeats inside it.
    """
    counts: dict[str, dict[str, int]] = {p: {} for p in phrases}
    for name, dataset in corpora.items():
        for phrase in phrases:
            counts[phrase][name] = sum(1 for rec in dataset if rec.summary is not None and phrase in rec.summary)
    return OverlapTable(phrases=tuple(phrases), corpora=tuple(corpora.keys()), counts=counts)
