"""Multi-stage quality filter that turns raw annotation drafts into pseudo-labels.

Stages run in a fixed order — sanity, consensus, confidence, coherence — and
each one accounts for every sha it drops with exactly one reason.  The final
survivors at the selected temperature become provenance="pseudo" records.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .backends import (
    AnnotationDraft,
    Backend,
    FAILURE_KINDS,
    GenerationRequest,
    ModelHandle,
    ParseFailure,
    make_backend,
    parse_judge_verdict,
    render_prompt,
)
from .corpus import Dataset, ScriptRecord
from .errors import ConfigError, InvalidField, MissingConfidence, Transport
from .util import atomic_write_text, json_line, percent

# drop reasons beyond the parse-failure kinds
REASON_MISSING_AT_TEMP = "MissingAtTemperature"
REASON_LABEL_DISAGREEMENT = "LabelDisagreement"
REASON_LANGUAGE_DISAGREEMENT = "LanguageDisagreement"
REASON_LOW_CONFIDENCE = "LowConfidence"
REASON_JUDGE_MISMATCH = "JudgeMismatch"
REASON_JUDGE_UNAVAILABLE = "JudgeUnavailable"

STAGE_NAMES = ("sanity", "consensus", "confidence", "coherence")

DEFAULT_TEMPERATURES = (0.4, 0.6, 0.8)
DEFAULT_ALPHA = 0.9
DEFAULT_SELECT_TEMPERATURE = 0.6


@dataclass(frozen=True)
class AnnotationSet:
    """All annotation outcomes for one temperature, keyed and ordered by sha."""

    temperature: float
    drafts: dict  # sha256 -> AnnotationDraft
    failures: dict  # sha256 -> ParseFailure

    def __post_init__(self) -> None:
        overlap = set(self.drafts) & set(self.failures)
        if overlap:
            raise InvalidField("drafts/failures", f"sha present in both: {sorted(overlap)[:3]}")

    @property
    def input_count(self) -> int:
        return len(self.drafts) + len(self.failures)

    def restrict(self, shas: set[str]) -> "AnnotationSet":
        """Keep only the named drafts, preserving insertion order."""
        return AnnotationSet(
            temperature=self.temperature,
            drafts={s: d for s, d in self.drafts.items() if s in shas},
            failures={},
        )


@dataclass(frozen=True)
class FilterConfig:
    """Knobs for one pipeline run."""

    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    alpha: float = DEFAULT_ALPHA
    select_temperature: float = DEFAULT_SELECT_TEMPERATURE
    judge: ModelHandle | None = None
    consensus_on_language: bool = False

    def __post_init__(self) -> None:
        if not self.temperatures:
            raise ConfigError("temperatures must be non-empty")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.select_temperature not in self.temperatures:
            raise ConfigError("select_temperature must be one of the sampled temperatures")

    def to_json_dict(self) -> dict:
        return {
            "temperatures": list(self.temperatures),
            "alpha": self.alpha,
            "select_temperature": self.select_temperature,
            "judge": self.judge.to_json_dict() if self.judge else None,
            "consensus_on_language": self.consensus_on_language,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FilterConfig":
        judge = obj.get("judge")
        return cls(
            temperatures=tuple(obj.get("temperatures", DEFAULT_TEMPERATURES)),
            alpha=obj.get("alpha", DEFAULT_ALPHA),
            select_temperature=obj.get("select_temperature", DEFAULT_SELECT_TEMPERATURE),
            judge=ModelHandle.from_json_dict(judge) if judge else None,
            consensus_on_language=obj.get("consensus_on_language", False),
        )


@dataclass(frozen=True)
class StageReport:
    """Accounting for one stage: input = kept + sum(drops)."""

    name: str
    input_count: int
    kept_count: int
    drops: dict  # reason -> count

    def dropped_count(self) -> int:
        return sum(self.drops.values())

    def reduction_percent(self) -> float:
        """Share of this stage's input that was dropped, two decimals, half-up."""
        if self.input_count == 0:
            return 0.0
        return percent(self.dropped_count(), self.input_count)


@dataclass(frozen=True)
class FilterReport:
    """Full pipeline accounting along the selected-temperature lineage."""

    stages: tuple[StageReport, ...]
    final_kept: int
    dropped: dict = field(default_factory=dict)  # sha256 -> (stage, reason)

    def stage(self, name: str) -> StageReport:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(name)

    def validate_conservation(self) -> None:
        """Assert the bookkeeping invariants; raises AssertionError on breakage."""
        for stage in self.stages:
            assert stage.kept_count + stage.dropped_count() == stage.input_count, stage.name
        for earlier, later in zip(self.stages, self.stages[1:]):
            assert later.input_count == earlier.kept_count, f"{earlier.name} -> {later.name}"
        if self.stages:
            assert self.final_kept == self.stages[-1].kept_count

    def to_json_dict(self) -> dict:
        return {
            "stages": [
                {"name": s.name, "input": s.input_count, "kept": s.kept_count, "drops": dict(s.drops)}
                for s in self.stages
            ],
            "final_kept": self.final_kept,
            "dropped": {sha: {"stage": st, "reason": r} for sha, (st, r) in self.dropped.items()},
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FilterReport":
        stages = tuple(
            StageReport(name=s["name"], input_count=s["input"], kept_count=s["kept"], drops=dict(s["drops"]))
            for s in obj["stages"]
        )
        dropped = {sha: (v["stage"], v["reason"]) for sha, v in obj.get("dropped", {}).items()}
        return cls(stages=stages, final_kept=obj["final_kept"], dropped=dropped)

    def render_text(self) -> str:
        lines = [f"{'stage':<12}{'input':>10}{'kept':>10}{'dropped':>10}{'reduction':>11}"]
        for s in self.stages:
            lines.append(
                f"{s.name:<12}{s.input_count:>10,}{s.kept_count:>10,}"
                f"{s.dropped_count():>10,}{s.reduction_percent():>10.2f}%"
            )
            for reason in sorted(s.drops):
                lines.append(f"{'':<12}  - {reason}: {s.drops[reason]:,}")
        if self.stages:
            total_in = self.stages[0].input_count
            lines.append(f"{'overall':<12}{total_in:>10,}{self.final_kept:>10,}"
                         f"{total_in - self.final_kept:>10,}"
                         f"{(percent(total_in - self.final_kept, total_in) if total_in else 0.0):>10.2f}%")
        return "\n".join(lines)


# -- stages -------------------------------------------------------------------


def sanity_filter(annset: AnnotationSet) -> tuple[AnnotationSet, dict]:
    """Drop responses that never parsed; reasons are the parse-failure kinds."""
    dropped = {sha: failure.kind for sha, failure in annset.failures.items()}
    kept = AnnotationSet(temperature=annset.temperature, drafts=dict(annset.drafts), failures={})
    return kept, dropped


def consensus_filter(
    sets: Mapping[float, AnnotationSet],
    temperatures: Iterable[float] | None = None,
    *,
    on_language: bool = False,
) -> tuple[dict, dict]:
    """Keep shas whose label agrees across every temperature.

    A sha must be present (as a parsed draft) at all temperatures and carry a
    single distinct label across them; optionally the predicted language must
    agree too.  Returns ({temperature: restricted AnnotationSet},
    {temperature: {sha: reason}}).
    """
    temps = sorted(temperatures if temperatures is not None else sets.keys())
    for t in temps:
        if t not in sets:
            raise ConfigError(f"no annotation set for temperature {t}")

    def _reason(sha: str) -> str | None:
        if any(sha not in sets[t].drafts for t in temps):
            return REASON_MISSING_AT_TEMP
        if len({sets[t].drafts[sha].malicious for t in temps}) != 1:
            return REASON_LABEL_DISAGREEMENT
        if on_language and len({sets[t].drafts[sha].language for t in temps}) != 1:
            return REASON_LANGUAGE_DISAGREEMENT
        return None

    kept_sets: dict[float, AnnotationSet] = {}
    dropped: dict[float, dict[str, str]] = {}
    for t in temps:
        reasons = {sha: _reason(sha) for sha in sets[t].drafts}
        survivors = {sha for sha, r in reasons.items() if r is None}
        kept_sets[t] = sets[t].restrict(survivors)
        dropped[t] = {sha: r for sha, r in reasons.items() if r is not None}
    return kept_sets, dropped


def confidence_filter(annset: AnnotationSet, alpha: float) -> tuple[AnnotationSet, dict]:
    """Keep drafts whose label probability is at least alpha (inclusive)."""
    kept: dict[str, AnnotationDraft] = {}
    dropped: dict[str, str] = {}
    for sha, draft in annset.drafts.items():
        if draft.label_probability is None:
            raise MissingConfidence(sha)
        if draft.label_probability >= alpha:
            kept[sha] = draft
        else:
            dropped[sha] = REASON_LOW_CONFIDENCE
    return AnnotationSet(temperature=annset.temperature, drafts=kept, failures={}), dropped


def coherence_filter(
    annset: AnnotationSet,
    judge: ModelHandle,
    *,
    backend: Backend | None = None,
    workers: int = 1,
    prompts_dir: Path | str | None = None,
    seed: int | None = None,
) -> tuple[AnnotationSet, dict]:
    """Keep drafts whose label an independent judge re-derives from the summary alone.

    The judge sees only the summary text.  A judge call that fails transport
    or produces no readable verdict drops the sha with reason JudgeUnavailable.
    """
    judge_backend = backend or make_backend(judge)

    def _verdict(draft: AnnotationDraft) -> bool | None:
        prompt = render_prompt("judge_coherence", {"summary": draft.summary}, prompts_dir)
        request = GenerationRequest(prompt=prompt, temperature=0.0, max_output_tokens=64, seed=seed)
        try:
            completion = judge_backend.complete(judge, request)
        except Transport:
            return None
        return parse_judge_verdict(completion.text)

    drafts = list(annset.drafts.values())
    if workers > 1 and len(drafts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(_verdict, drafts))
    else:
        verdicts = [_verdict(d) for d in drafts]

    kept: dict[str, AnnotationDraft] = {}
    dropped: dict[str, str] = {}
    for draft, verdict in zip(drafts, verdicts):
        if verdict is None:
            dropped[draft.sha256] = REASON_JUDGE_UNAVAILABLE
        elif verdict == draft.malicious:
            kept[draft.sha256] = draft
        else:
            dropped[draft.sha256] = REASON_JUDGE_MISMATCH
    return AnnotationSet(temperature=annset.temperature, drafts=kept, failures={}), dropped


# -- pipeline -------------------------------------------------------------------


def _histogram(reasons: Mapping[str, str]) -> dict:
    out: dict[str, int] = {}
    for reason in reasons.values():
        out[reason] = out.get(reason, 0) + 1
    return dict(sorted(out.items()))


def run_pipeline(
    sets: Mapping[float, AnnotationSet],
    config: FilterConfig,
    *,
    backend: Backend | None = None,
    workers: int = 1,
    iteration: int = 0,
    prompts_dir: Path | str | None = None,
    seed: int | None = None,
) -> tuple[Dataset, FilterReport]:
    """Run all four stages and emit surviving pseudo-label records.

    Stage accounting follows the selected-temperature lineage: each stage's
    input is the previous stage's kept set, and every dropped sha appears in
    the report exactly once with the stage and reason that removed it.
    """
    for t in config.temperatures:
        if t not in sets:
            raise ConfigError(f"no annotation set for configured temperature {t}")
    if config.judge is None:
        raise ConfigError("filter config has no judge model")
    select = config.select_temperature

    stages: list[StageReport] = []
    dropped_by_sha: dict[str, tuple[str, str]] = {}

    def _record_stage(name: str, input_count: int, reasons: Mapping[str, str], kept_count: int) -> None:
        stages.append(StageReport(name=name, input_count=input_count, kept_count=kept_count, drops=_histogram(reasons)))
        for sha, reason in reasons.items():
            dropped_by_sha[sha] = (name, reason)

    # sanity, across every temperature; accounting tracks the select lineage
    sane = {}
    for t, annset in sets.items():
        kept, reasons = sanity_filter(annset)
        sane[t] = kept
        if t == select:
            _record_stage("sanity", annset.input_count, reasons, len(kept.drafts))

    # consensus across the configured temperatures
    agreed, disagreements = consensus_filter(
        {t: sane[t] for t in config.temperatures}, config.temperatures, on_language=config.consensus_on_language
    )
    _record_stage(
        "consensus", len(sane[select].drafts), disagreements[select], len(agreed[select].drafts)
    )

    # confidence and coherence apply to the selected lineage, whose survivors
    # are the only records the pipeline emits
    confident, low_conf = confidence_filter(agreed[select], config.alpha)
    _record_stage("confidence", len(agreed[select].drafts), low_conf, len(confident.drafts))

    coherent, incoherent = coherence_filter(
        confident, config.judge, backend=backend, workers=workers, prompts_dir=prompts_dir, seed=seed
    )
    _record_stage("coherence", len(confident.drafts), incoherent, len(coherent.drafts))

    records = tuple(
        ScriptRecord(
            sha256=draft.sha256,
            language=draft.language,
            malicious=draft.malicious,
            summary=draft.summary,
            provenance="pseudo",
            iteration=iteration,
        )
        for draft in coherent.drafts.values()
    )
    report = FilterReport(stages=tuple(stages), final_kept=len(records), dropped=dropped_by_sha)
    report.validate_conservation()
    return Dataset(records=records, name="pseudo"), report


# -- retention sweep -------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    """Retention at one (alpha, temperature) point; percentages, two decimals."""

    alpha: float
    temperature: float
    label_retention: float
    language_retention: float | None


def retention_sweep(
    sets: Mapping[float, AnnotationSet],
    alphas: Iterable[float],
    temperatures: Iterable[float] | None = None,
) -> list[SweepRow]:
    """Share of parsed drafts meeting each confidence threshold, per temperature.

    The language column uses the probability on the language prediction and is
    omitted (None) wherever any draft lacks one.  Rows are ordered by
    (alpha, temperature).
    """
    temps = sorted(temperatures if temperatures is not None else sets.keys())
    rows: list[SweepRow] = []
    for alpha in sorted(set(float(a) for a in alphas)):
        for t in temps:
            if t not in sets:
                raise ConfigError(f"no annotation set for temperature {t}")
            drafts = list(sets[t].drafts.values())
            for draft in drafts:
                if draft.label_probability is None:
                    raise MissingConfidence(draft.sha256)
            total = len(drafts)
            if total == 0:
                rows.append(SweepRow(alpha=alpha, temperature=t, label_retention=100.0, language_retention=None))
                continue
            kept = sum(1 for d in drafts if d.label_probability >= alpha)
            label_ret = percent(kept, total)
            if all(d.language_probability is not None for d in drafts):
                lang_kept = sum(1 for d in drafts if d.language_probability >= alpha)
                lang_ret: float | None = percent(lang_kept, total)
            else:
                lang_ret = None
            rows.append(SweepRow(alpha=alpha, temperature=t, label_retention=label_ret, language_retention=lang_ret))
    return rows


SWEEP_CSV_HEADER = "alpha,temperature,label_retention,language_retention"


def render_sweep_csv(rows: Iterable[SweepRow]) -> str:
    lines = [SWEEP_CSV_HEADER]
    for row in rows:
        lang = "" if row.language_retention is None else f"{row.language_retention:.2f}"
        lines.append(f"{row.alpha:g},{row.temperature:g},{row.label_retention:.2f},{lang}")
    return "\n".join(lines) + "\n"


def write_sweep_csv(rows: Iterable[SweepRow], path: Path | str) -> None:
    atomic_write_text(Path(path), render_sweep_csv(rows))


# -- annotation (de)serialization -------------------------------------------------


def annotation_to_json(item: AnnotationDraft | ParseFailure) -> dict:
    """JSON-able dict for one annotation outcome (draft or failure)."""
    if isinstance(item, AnnotationDraft):
        out = {
            "kind": "draft",
            "sha256": item.sha256,
            "temperature": item.temperature,
            "malicious": item.malicious,
            "language": item.language,
            "summary": item.summary,
            "raw_text": item.raw_text,
        }
        if item.label_probability is not None:
            out["label_probability"] = item.label_probability
        if item.language_probability is not None:
            out["language_probability"] = item.language_probability
        return out
    return {
        "kind": "failure",
        "sha256": item.sha256,
        "temperature": item.temperature,
        "failure": item.kind,
        "detail": item.detail,
    }


def annotation_from_json(obj: dict) -> AnnotationDraft | ParseFailure:
    if obj.get("kind") == "draft":
        return AnnotationDraft(
            sha256=obj["sha256"],
            temperature=obj["temperature"],
            malicious=obj["malicious"],
            language=obj["language"],
            summary=obj["summary"],
            raw_text=obj.get("raw_text", ""),
            label_probability=obj.get("label_probability"),
            language_probability=obj.get("language_probability"),
        )
    return ParseFailure(
        sha256=obj["sha256"], temperature=obj["temperature"], kind=obj["failure"], detail=obj.get("detail", "")
    )


def save_annotation_jsonl(annset: AnnotationSet, path: Path | str) -> None:
    items: list[AnnotationDraft | ParseFailure] = list(annset.drafts.values()) + list(annset.failures.values())
    atomic_write_text(Path(path), "".join(json_line(annotation_to_json(i)) + "\n" for i in items))


def load_annotation_jsonl(path: Path | str, temperature: float, order: Iterable[str] | None = None) -> AnnotationSet:
    """Rebuild one temperature's AnnotationSet from a JSONL file.

    `order` fixes the sha ordering (normally the source corpus), making the
    result independent of the order lines were appended in; without it, shas
    keep their first-appearance order in the file.
    """
    by_sha: dict[str, AnnotationDraft | ParseFailure] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            item = annotation_from_json(json.loads(line))
            if item.temperature == temperature:
                by_sha[item.sha256] = item
    drafts: dict[str, AnnotationDraft] = {}
    failures: dict[str, ParseFailure] = {}
    for sha in order if order is not None else list(by_sha):
        item = by_sha.get(sha)
        if item is None:
            continue
        if isinstance(item, AnnotationDraft):
            drafts[sha] = item
        else:
            failures[sha] = item
    return AnnotationSet(temperature=temperature, drafts=drafts, failures=failures)
