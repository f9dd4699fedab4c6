"""Script corpus model: records, datasets, JSONL round-trip, and summary stats.

A record is one script identified by its sha256.  Datasets are ordered,
duplicate-free collections of records and are the unit every other module
consumes.  The on-disk form is JSONL with one record object per line.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .errors import DuplicateSha, InvalidField, MalformedLine, MissingContent
from .util import atomic_write_text, json_line, ratio_round

LANGUAGES = ("sh", "bat", "js", "ps", "py")
PROVENANCES = ("seed", "train", "test", "pseudo")

_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")

# canonical JSONL field order
_FIELD_ORDER = ("sha256", "content", "language", "malicious", "summary", "provenance", "iteration")


@dataclass(frozen=True)
class ScriptRecord:
    """One script with its label, optional body, and optional summary."""

    sha256: str
    language: str
    malicious: bool
    content: str | None = None
    summary: str | None = None
    provenance: str = "train"
    iteration: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.sha256, str) or not _SHA256_RE.fullmatch(self.sha256):
            raise InvalidField("sha256", "must be 64 lowercase hex characters")
        if self.language not in LANGUAGES:
            raise InvalidField("language", f"{self.language!r} not one of {LANGUAGES}")
        if not isinstance(self.malicious, bool):
            raise InvalidField("malicious", "must be a boolean")
        if self.content is not None and not isinstance(self.content, str):
            raise InvalidField("content", "must be a string when present")
        if self.summary is not None and not isinstance(self.summary, str):
            raise InvalidField("summary", "must be a string when present")
        if self.provenance not in PROVENANCES:
            raise InvalidField("provenance", f"{self.provenance!r} not one of {PROVENANCES}")
        if self.iteration is not None and (not isinstance(self.iteration, int) or isinstance(self.iteration, bool) or self.iteration < 0):
            raise InvalidField("iteration", "must be a non-negative integer when present")
        if self.provenance == "pseudo" and self.iteration is None:
            raise InvalidField("iteration", "required when provenance is 'pseudo'")
        if self.provenance in ("seed", "test") and self.summary is None:
            raise InvalidField("summary", f"required when provenance is {self.provenance!r}")

    def to_json_dict(self) -> dict:
        """Serializable dict with canonical field order; optional fields omitted when None."""
        out: dict = {}
        for name in _FIELD_ORDER:
            value = getattr(self, name)
            if value is None and name in ("content", "summary", "iteration"):
                continue
            out[name] = value
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ScriptRecord":
        if not isinstance(obj, dict):
            raise InvalidField("record", "line is not a JSON object")
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in obj.items() if k in known}
        for required in ("sha256", "language", "malicious"):
            if required not in kwargs:
                raise InvalidField(required, "missing")
        return cls(**kwargs)


@dataclass(frozen=True)
class Dataset:
    """Ordered, sha-unique collection of records."""

    records: tuple[ScriptRecord, ...]
    name: str = field(default="dataset", compare=False)

    def __post_init__(self) -> None:
        index: dict[str, ScriptRecord] = {}
        for rec in self.records:
            if rec.sha256 in index:
                raise DuplicateSha(rec.sha256)
            index[rec.sha256] = rec
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ScriptRecord]:
        return iter(self.records)

    def __contains__(self, sha256: str) -> bool:
        return sha256 in self._index  # type: ignore[attr-defined]

    def get(self, sha256: str) -> ScriptRecord | None:
        return self._index.get(sha256)  # type: ignore[attr-defined]

    @property
    def shas(self) -> tuple[str, ...]:
        return tuple(rec.sha256 for rec in self.records)


def empty_dataset(name: str = "empty") -> Dataset:
    return Dataset(records=(), name=name)


def load_jsonl(path: Path | str, name: str | None = None) -> Dataset:
    """Load a dataset from JSONL; unknown keys are ignored, bad lines raise."""
    path = Path(path)
    records: list[ScriptRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(lineno, str(exc)) from exc
            if not isinstance(obj, dict):
                raise MalformedLine(lineno, "not a JSON object")
            rec = ScriptRecord.from_json_dict(obj)
            if rec.sha256 in seen:
                raise DuplicateSha(rec.sha256)
            seen.add(rec.sha256)
            records.append(rec)
    return Dataset(records=tuple(records), name=name or path.stem)


def save_jsonl(dataset: Dataset, path: Path | str) -> None:
    """Write a dataset as JSONL, atomically; load_jsonl(save_jsonl(d)) == d."""
    text = "".join(json_line(rec.to_json_dict()) + "\n" for rec in dataset)
    atomic_write_text(Path(path), text)


def merge(seed: Dataset, pseudo: Dataset, name: str | None = None) -> Dataset:
    """Union of two datasets; on sha collision the seed record wins.

    Order is seed records first, then pseudo records in their input order.
    """
    records = list(seed.records)
    for rec in pseudo:
        if rec.sha256 not in seed:
            records.append(rec)
    return Dataset(records=tuple(records), name=name or f"{seed.name}+{pseudo.name}")


# -- stats -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitStats:
    """Per-language benign/malicious counts for one dataset."""

    name: str
    counts: dict  # language -> {"benign": int, "malicious": int}
    total: int

    def to_json_dict(self) -> dict:
        return {"name": self.name, "counts": self.counts, "total": self.total}

    def render_text(self) -> str:
        lines = [f"dataset: {self.name}", f"{'language':<10}{'benign':>8}{'malicious':>11}{'total':>8}"]
        for lang in LANGUAGES:
            row = self.counts[lang]
            lines.append(f"{lang:<10}{row['benign']:>8}{row['malicious']:>11}{row['benign'] + row['malicious']:>8}")
        benign = sum(self.counts[lang]["benign"] for lang in LANGUAGES)
        malicious = sum(self.counts[lang]["malicious"] for lang in LANGUAGES)
        lines.append(f"{'all':<10}{benign:>8}{malicious:>11}{self.total:>8}")
        return "\n".join(lines)


def split_stats(dataset: Dataset) -> SplitStats:
    """Language x label breakdown, zero-filled for all five languages."""
    counts = {lang: {"benign": 0, "malicious": 0} for lang in LANGUAGES}
    for rec in dataset:
        counts[rec.language]["malicious" if rec.malicious else "benign"] += 1
    return SplitStats(name=dataset.name, counts=counts, total=len(dataset))


def default_token_counter(text: str) -> int:
    """Crude size proxy: one token per four bytes of UTF-8, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def _bucket(count: int) -> str:
    if count <= 0:
        return "0"
    low = 1 << count.bit_length() - 1
    return f"{low}-{2 * low - 1}"


@dataclass(frozen=True)
class CorpusStats:
    """Token-count summary over a dataset's script bodies."""

    name: str
    count: int
    mean_tokens: float
    median_tokens: int
    histogram: dict  # bucket label -> record count, ascending by bucket floor

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "count": self.count,
            "mean_tokens": self.mean_tokens,
            "median_tokens": self.median_tokens,
            "histogram": self.histogram,
        }

    def render_text(self) -> str:
        lines = [
            f"dataset: {self.name}",
            f"records: {self.count}",
            f"mean tokens: {self.mean_tokens}",
            f"median tokens: {self.median_tokens}",
            "histogram:",
        ]
        for bucket, n in self.histogram.items():
            lines.append(f"  {bucket:>14}  {n}")
        return "\n".join(lines)


def corpus_stats(dataset: Dataset, token_counter: Callable[[str], int] | None = None) -> CorpusStats:
    """Mean/median token counts plus a power-of-two histogram.

    Every record must carry content.  The median of an even-count set is the
    lower of the two middle elements, and the mean is rounded half-up to two
    decimals.
    """
    counter = token_counter or default_token_counter
    counts: list[int] = []
    for rec in dataset:
        if rec.content is None:
            raise MissingContent(rec.sha256)
        counts.append(counter(rec.content))
    if not counts:
        return CorpusStats(name=dataset.name, count=0, mean_tokens=0.0, median_tokens=0, histogram={})
    counts.sort()
    mean_tokens = ratio_round(sum(counts), len(counts))
    median_tokens = counts[(len(counts) - 1) // 2]
    histogram: dict[str, int] = {}
    for c in counts:
        histogram[_bucket(c)] = histogram.get(_bucket(c), 0) + 1
    ordered = dict(sorted(histogram.items(), key=lambda kv: 0 if kv[0] == "0" else int(kv[0].split("-")[0])))
    return CorpusStats(
        name=dataset.name,
        count=len(counts),
        mean_tokens=mean_tokens,
        median_tokens=median_tokens,
        histogram=ordered,
    )


def records_by_sha(datasets: Iterable[Dataset]) -> dict[str, ScriptRecord]:
    """Flat sha -> record map over several datasets; later datasets win."""
    out: dict[str, ScriptRecord] = {}
    for ds in datasets:
        for rec in ds:
            out[rec.sha256] = rec
    return out
