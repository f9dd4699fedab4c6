"""Shared fixtures and builders for the test suite."""
from __future__ import annotations

import hashlib
import random

import pytest

from scriptannot.backends import AnnotationDraft, ModelHandle, ParseFailure, summary_for
from scriptannot.corpus import LANGUAGES, Dataset, ScriptRecord
from scriptannot.filterpipe import AnnotationSet


def sha_for(key: object) -> str:
    return hashlib.sha256(f"fixture-{key}".encode()).hexdigest()


def make_record(
    key: object,
    *,
    language: str | None = None,
    malicious: bool | None = None,
    content: str | None = "",
    summary: str | None = None,
    provenance: str = "train",
    iteration: int | None = None,
) -> ScriptRecord:
    """One fixture record; content embeds the mock backend's ground-truth hints."""
    idx = abs(hash(str(key))) if not isinstance(key, int) else key
    language = language if language is not None else LANGUAGES[idx % len(LANGUAGES)]
    malicious = malicious if malicious is not None else idx % 2 == 1
    if content == "":
        content = f"#lang={language} #mal={int(malicious)}\n# sample body {key}\necho {key}\n"
    return ScriptRecord(
        sha256=sha_for(key),
        language=language,
        malicious=malicious,
        content=content,
        summary=summary,
        provenance=provenance,
        iteration=iteration,
    )


def make_corpus(n: int, *, name: str = "corpus", prefix: str = "c", provenance: str = "train") -> Dataset:
    records = tuple(make_record(f"{prefix}-{i}", provenance=provenance) for i in range(n))
    return Dataset(records=records, name=name)


def make_seed_dataset(n: int, *, name: str = "seed", prefix: str = "s") -> Dataset:
    records = tuple(
        make_record(f"{prefix}-{i}", provenance="seed", summary=summary_for(i % 2 == 1, "seed", i))
        for i in range(n)
    )
    return Dataset(records=records, name=name)


def annotator_handle(identifier: str = "mock-base", **rates: float) -> ModelHandle:
    query = "&".join(f"{k}={v:g}" for k, v in sorted(rates.items()))
    return ModelHandle(identifier=identifier, endpoint=f"mock:annotator?{query}", role="annotator")


def judge_handle(policy: str = "marker", fail: float = 0.0, garble: float = 0.0, seed: int = 0) -> ModelHandle:
    return ModelHandle(
        identifier="mock-judge",
        endpoint=f"mock:judge?policy={policy}&fail={fail:g}&garble={garble:g}&seed={seed}",
        role="judge",
    )


def synth_sets(
    seed: int,
    n: int,
    temperatures: tuple[float, ...] = (0.4, 0.6, 0.8),
    *,
    alpha_anchor: float | None = 0.9,
    with_language_probability: bool = True,
) -> dict[float, AnnotationSet]:
    """Randomized annotation outcomes, wilder than the mock backend produces.

    Injects absences, every parse-failure kind, per-temperature label flips,
    incoherent summaries, and probabilities that sometimes land exactly on the
    confidence threshold.
    """
    rng = random.Random(seed)
    shas = [sha_for(f"synth-{seed}-{i}") for i in range(n)]
    base_label = {sha: rng.random() < 0.5 for sha in shas}
    sets: dict[float, AnnotationSet] = {}
    for temp in temperatures:
        drafts: dict[str, AnnotationDraft] = {}
        failures: dict[str, ParseFailure] = {}
        for sha in shas:
            roll = rng.random()
            if roll < 0.05:
                continue  # never annotated at this temperature
            if roll < 0.15:
                kind = rng.choice(("Empty", "Truncated", "IncompleteJson"))
                failures[sha] = ParseFailure(sha256=sha, temperature=temp, kind=kind, detail="synthetic")
                continue
            label = base_label[sha] != (rng.random() < 0.15)
            coherent = rng.random() >= 0.12
            summary = summary_for(label if coherent else not label, seed, sha, temp)
            if rng.random() < 0.08:
                summary = f"does something with files ({rng.randrange(1000)})"  # cue-free
            if alpha_anchor is not None and rng.random() < 0.04:
                probability = alpha_anchor
            else:
                probability = min(1.0, 0.3 + rng.random() * 0.7)
            drafts[sha] = AnnotationDraft(
                sha256=sha,
                temperature=temp,
                malicious=label,
                language=rng.choice(LANGUAGES),
                summary=summary,
                raw_text="{}",
                label_probability=probability,
                language_probability=min(1.0, 0.4 + rng.random() * 0.6) if with_language_probability else None,
            )
        sets[temp] = AnnotationSet(temperature=temp, drafts=drafts, failures=failures)
    return sets


@pytest.fixture
def tiny_corpus() -> Dataset:
    return make_corpus(8, name="tiny")


ACCEPTANCE_VERDICTS: list[str] = []


def record_acceptance(name: str, verdict: str) -> None:
    """Collect one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_VERDICTS.append(f"[ACCEPTANCE] {name}: {verdict}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
