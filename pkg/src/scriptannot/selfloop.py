"""Iterated self-training: fine-tune, annotate the unlabeled corpus, filter, repeat.

Each iteration runs three phases — finetuning, inferring, filtering — and
persists its progress to a workspace directory after every phase (and after
every single annotation while inferring), so an interrupted run resumes
without redoing completed work.  All state files are written atomically;
concurrent use of one workspace is fenced by a lock file.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .backends import Backend, ModelHandle, annotate_corpus, make_backend
from .corpus import Dataset, load_jsonl, merge, save_jsonl
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    FinetuneFailed,
    FinetuneTimeout,
    VersionMismatch,
    WorkspaceLocked,
)
from .filterpipe import (
    AnnotationSet,
    FilterConfig,
    FilterReport,
    annotation_from_json,
    annotation_to_json,
    load_annotation_jsonl,
    run_pipeline,
)
from .util import atomic_write_json, atomic_write_text, json_line, stable_hex

MANIFEST_VERSION = 1

STATUSES = ("pending", "finetuning", "inferring", "filtering", "done", "failed")


# -- fine-tuners ---------------------------------------------------------------


@dataclass(frozen=True)
class FinetunerConfig:
    """Which fine-tuning provider to use and its provider-specific params."""

    kind: str = "mock"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"unknown finetuner kind {self.kind!r}")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FinetunerConfig":
        return cls(kind=obj.get("kind", "mock"), params=dict(obj.get("params", {})))


@dataclass
class FinetuneJob:
    """One fine-tuning request: the full training set plus opaque hyperparameters."""

    training_set: Dataset
    hyperparameters: dict = field(default_factory=dict)
    result: ModelHandle | None = None


_MOCK_SCALED_RATES = ("empty", "truncated", "malformed", "flip", "lowconf", "incoherent")


class MockFinetuner:
    """Deterministic stand-in for a fine-tuning provider.

    The returned handle points at the mock backend with fault rates scaled
    down by training-set size (factor size_scale / (size_scale + n)), so a
    model trained on more data annotates strictly more cleanly — enough
    structure for loop tests without any real training.
    """

    def __init__(self, params: dict | None = None) -> None:
        self.params = dict(params or {})

    def submit(self, job: FinetuneJob) -> ModelHandle:
        n = len(job.training_set)
        if n == 0:
            raise FinetuneFailed("training set is empty")
        seed = int(self.params.get("seed", 0))
        size_scale = float(self.params.get("size_scale", 500.0))
        factor = size_scale / (size_scale + n)
        query = [f"seed={seed}"]
        for key in _MOCK_SCALED_RATES:
            base = float(self.params.get(key, 0.0))
            if base:
                query.append(f"{key}={base * factor:.6f}")
        digest = stable_hex("finetune", n, seed)[:12]
        return ModelHandle(
            identifier=f"mock-ft-{digest}", endpoint="mock:annotator?" + "&".join(query), role="annotator"
        )


class HttpFinetuner:
    """Thin client for a job-style fine-tuning API: submit, then poll.

    POST {endpoint} with the job size and hyperparameters, then GET
    {endpoint}/{job_id} until the job reports succeeded (yielding a model) or
    failed; polling past the deadline raises FinetuneTimeout.
    """

    def __init__(self, params: dict, sleeper: Callable[[float], None] = time.sleep, clock=time.monotonic) -> None:
        if "endpoint" not in params:
            raise ConfigError("http finetuner needs an 'endpoint' param")
        self.endpoint = str(params["endpoint"]).rstrip("/")
        self.poll_interval_s = float(params.get("poll_interval_s", 5.0))
        self.deadline_s = float(params.get("deadline_s", 3600.0))
        self._sleep = sleeper
        self._clock = clock

    def submit(self, job: FinetuneJob) -> ModelHandle:
        import requests

        if len(job.training_set) == 0:
            raise FinetuneFailed("training set is empty")
        response = requests.post(
            self.endpoint,
            json={"training_records": len(job.training_set), "hyperparameters": dict(job.hyperparameters)},
            timeout=60,
        )
        if response.status_code >= 400:
            raise FinetuneFailed(f"submit rejected with status {response.status_code}")
        job_id = response.json()["job_id"]
        start = self._clock()
        while True:
            status_resp = requests.get(f"{self.endpoint}/{job_id}", timeout=60)
            obj = status_resp.json()
            status = obj.get("status")
            if status == "succeeded":
                model = obj["model"]
                return ModelHandle(identifier=model["identifier"], endpoint=model["endpoint"], role="annotator")
            if status == "failed":
                raise FinetuneFailed(str(obj.get("detail", "provider reported failure")))
            if self._clock() - start > self.deadline_s:
                raise FinetuneTimeout(f"job {job_id} still {status!r} after {self.deadline_s}s")
            self._sleep(self.poll_interval_s)


def make_finetuner(config: FinetunerConfig):
    if config.kind == "mock":
        return MockFinetuner(config.params)
    return HttpFinetuner(config.params)


def finetune(job: FinetuneJob, finetuner) -> ModelHandle:
    """Run one fine-tuning job to completion and return the resulting handle."""
    model = finetuner.submit(job)
    job.result = model
    return model


# -- loop configuration and state -----------------------------------------------


@dataclass(frozen=True)
class LoopConfig:
    """Everything one self-training run needs, serializable into the manifest."""

    k: int
    filter: FilterConfig
    seed_dataset: Path
    unlabeled_corpus: Path
    workspace: Path
    finetuner: FinetunerConfig = field(default_factory=FinetunerConfig)
    hyperparameters: dict = field(default_factory=dict)
    workers: int = 4
    seed: int = 0
    annotate_template: str = "annotate_simple"
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError("k must be a positive integer")
        if self.filter.judge is None:
            raise ConfigError("loop needs a judge model in the filter config")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "filter": self.filter.to_json_dict(),
            "seed_dataset": str(self.seed_dataset),
            "unlabeled_corpus": str(self.unlabeled_corpus),
            "finetuner": self.finetuner.to_json_dict(),
            "hyperparameters": dict(self.hyperparameters),
            "workers": self.workers,
            "seed": self.seed,
            "annotate_template": self.annotate_template,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_json_dict(cls, obj: dict, workspace: Path) -> "LoopConfig":
        return cls(
            k=obj["k"],
            filter=FilterConfig.from_json_dict(obj["filter"]),
            seed_dataset=Path(obj["seed_dataset"]),
            unlabeled_corpus=Path(obj["unlabeled_corpus"]),
            workspace=workspace,
            finetuner=FinetunerConfig.from_json_dict(obj.get("finetuner", {})),
            hyperparameters=dict(obj.get("hyperparameters", {})),
            workers=obj.get("workers", 4),
            seed=obj.get("seed", 0),
            annotate_template=obj.get("annotate_template", "annotate_simple"),
            max_output_tokens=obj.get("max_output_tokens", 1024),
        )


@dataclass
class IterationState:
    """Where one iteration stands; iteration 0 is the (empty) starting point."""

    iteration: int
    status: str
    model: ModelHandle | None = None
    pseudo_labels: Dataset | None = None
    report: FilterReport | None = None


@dataclass
class LoopHooks:
    """Observation points used by tests to inject crashes mid-run."""

    after_phase: Callable[[int, str], None] | None = None
    after_annotation: Callable[[int, object], None] | None = None


@dataclass(frozen=True)
class LoopResult:
    model: ModelHandle
    states: tuple


# -- workspace layout and bookkeeping ---------------------------------------------


def _manifest_path(workspace: Path) -> Path:
    return workspace / "manifest.json"


def _iteration_dir(workspace: Path, iteration: int) -> Path:
    return workspace / f"iteration_{iteration}"


def _annotation_path(workspace: Path, iteration: int, temperature: float) -> Path:
    return _iteration_dir(workspace, iteration) / f"annotations_t{temperature:g}.jsonl"


def _pseudo_path(workspace: Path, iteration: int) -> Path:
    return _iteration_dir(workspace, iteration) / "pseudo.jsonl"


def _report_path(workspace: Path, iteration: int) -> Path:
    return _iteration_dir(workspace, iteration) / "filter_report.json"


def _read_manifest(workspace: Path) -> dict:
    path = _manifest_path(workspace)
    if not path.is_file():
        raise CorruptCheckpoint(f"no manifest at {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise VersionMismatch(version, MANIFEST_VERSION)
    if "config" not in manifest or "iterations" not in manifest:
        raise CorruptCheckpoint("manifest is missing required sections")
    return manifest


class _WorkspaceLock:
    """Exclusive advisory lock via O_EXCL lock-file creation.

    Carries the holder's pid; a lock whose pid is no longer alive counts as
    stale and is silently reclaimed.
    """

    def __init__(self, workspace: Path) -> None:
        self.path = workspace / ".lock"

    def __enter__(self) -> "_WorkspaceLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = None
            try:
                holder = int(self.path.read_text().strip() or "0")
            except (OSError, ValueError):
                pass
            if holder and holder != os.getpid() and _pid_alive(holder):
                raise WorkspaceLocked(f"workspace locked by live pid {holder}") from None
            os.unlink(self.path)
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc_info) -> None:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# -- execution ----------------------------------------------------------------------


def run_loop(
    config: LoopConfig,
    *,
    finetuner=None,
    backend_factory: Callable[[ModelHandle], Backend] | None = None,
    hooks: LoopHooks | None = None,
) -> LoopResult:
    """Run the self-training loop from scratch for exactly k iterations."""
    workspace = Path(config.workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    if _manifest_path(workspace).exists():
        raise ConfigError(f"workspace {workspace} already has a manifest; resume it instead")
    manifest = {
        "version": MANIFEST_VERSION,
        "config": config.to_json_dict(),
        "iterations": {str(i): {"status": "pending", "model": None} for i in range(1, config.k + 1)},
    }
    with _WorkspaceLock(workspace):
        atomic_write_json(_manifest_path(workspace), manifest)
        return _execute(config, manifest, finetuner, backend_factory, hooks)


def resume(
    workspace: Path | str,
    *,
    finetuner=None,
    backend_factory: Callable[[ModelHandle], Backend] | None = None,
    hooks: LoopHooks | None = None,
) -> LoopResult:
    """Continue an interrupted run; completed phases are never re-executed."""
    workspace = Path(workspace)
    manifest = _read_manifest(workspace)
    config = LoopConfig.from_json_dict(manifest["config"], workspace=workspace)
    with _WorkspaceLock(workspace):
        return _execute(config, manifest, finetuner, backend_factory, hooks)


def load_states(workspace: Path | str) -> list[IterationState]:
    """Reconstruct every iteration's state purely from workspace files."""
    workspace = Path(workspace)
    manifest = _read_manifest(workspace)
    states = []
    for key in sorted(manifest["iterations"], key=int):
        entry = manifest["iterations"][key]
        states.append(_state_from_entry(workspace, int(key), entry))
    return states


def _state_from_entry(workspace: Path, iteration: int, entry: dict) -> IterationState:
    model = ModelHandle.from_json_dict(entry["model"]) if entry.get("model") else None
    pseudo = report = None
    if entry.get("status") == "done":
        pseudo = load_jsonl(_pseudo_path(workspace, iteration), name="pseudo")
        try:
            report = FilterReport.from_json_dict(
                json.loads(_report_path(workspace, iteration).read_text(encoding="utf-8"))
            )
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CorruptCheckpoint(f"iteration {iteration} report unreadable: {exc}") from exc
    return IterationState(
        iteration=iteration, status=entry.get("status", "pending"), model=model, pseudo_labels=pseudo, report=report
    )


def _execute(
    config: LoopConfig,
    manifest: dict,
    finetuner,
    backend_factory: Callable[[ModelHandle], Backend] | None,
    hooks: LoopHooks | None,
) -> LoopResult:
    workspace = Path(config.workspace)
    seed_ds = load_jsonl(config.seed_dataset)
    corpus = load_jsonl(config.unlabeled_corpus)
    finetuner = finetuner or make_finetuner(config.finetuner)
    backend_factory = backend_factory or make_backend
    hooks = hooks or LoopHooks()

    def _persist() -> None:
        atomic_write_json(_manifest_path(workspace), manifest)

    def _after_phase(iteration: int, phase: str) -> None:
        if hooks.after_phase is not None:
            hooks.after_phase(iteration, phase)

    states: list[IterationState] = []
    for i in range(1, config.k + 1):
        entry = manifest["iterations"][str(i)]
        status = entry["status"]
        if status == "done":
            states.append(_state_from_entry(workspace, i, entry))
            continue
        if status == "failed":
            status = "pending"  # a failed phase never completed; retry it from the top

        model: ModelHandle | None = ModelHandle.from_json_dict(entry["model"]) if entry.get("model") else None

        if status in ("pending", "finetuning"):
            entry["status"] = "finetuning"
            _persist()
            previous = (
                load_jsonl(_pseudo_path(workspace, i - 1), name="pseudo")
                if i > 1
                else Dataset(records=(), name="pseudo")
            )
            training = merge(seed_ds, previous, name=f"training_iteration_{i}")
            try:
                model = finetune(FinetuneJob(training_set=training, hyperparameters=dict(config.hyperparameters)), finetuner)
            except FinetuneFailed as exc:
                entry["status"] = "failed"
                _persist()
                raise FinetuneFailed(str(exc), iteration=i) from exc
            entry["model"] = model.to_json_dict()
            entry["status"] = "inferring"
            _persist()
            _after_phase(i, "finetuning")
            status = "inferring"

        if status == "inferring":
            assert model is not None
            _run_inference(config, corpus, model, backend_factory, hooks, workspace, i)
            entry["status"] = "filtering"
            _persist()
            _after_phase(i, "inferring")
            status = "filtering"

        if status == "filtering":
            assert model is not None
            sets = _load_sets(config, corpus, workspace, i)
            judge = config.filter.judge
            pseudo, report = run_pipeline(
                sets,
                config.filter,
                backend=backend_factory(judge),
                workers=config.workers,
                iteration=i,
                seed=config.seed,
            )
            save_jsonl(pseudo, _pseudo_path(workspace, i))
            atomic_write_json(_report_path(workspace, i), report.to_json_dict())
            entry["status"] = "done"
            entry["final_kept"] = report.final_kept
            _persist()
            _after_phase(i, "filtering")
            states.append(IterationState(iteration=i, status="done", model=model, pseudo_labels=pseudo, report=report))

    if not states or states[-1].model is None:
        raise CorruptCheckpoint("loop finished without a final model")
    return LoopResult(model=states[-1].model, states=tuple(states))


def _run_inference(
    config: LoopConfig,
    corpus: Dataset,
    model: ModelHandle,
    backend_factory: Callable[[ModelHandle], Backend],
    hooks: LoopHooks,
    workspace: Path,
    iteration: int,
) -> None:
    """Annotate every (sha, temperature) pair not already on disk, appending as we go."""
    iter_dir = _iteration_dir(workspace, iteration)
    iter_dir.mkdir(parents=True, exist_ok=True)
    temps = sorted(config.filter.temperatures)

    done: set[tuple[str, float]] = set()
    for temp in temps:
        path = _annotation_path(workspace, iteration, temp)
        if not path.exists():
            continue
        valid_lines = []
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for idx, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                item = annotation_from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                if idx == len(lines) - 1:
                    break  # torn final append from a crash; redo that annotation
                raise CorruptCheckpoint(f"{path} line {idx + 1} unreadable: {exc}") from exc
            valid_lines.append(json_line(annotation_to_json(item)) + "\n")
            done.add((item.sha256, item.temperature))
        if len(valid_lines) != len([l for l in lines if l.strip()]):
            atomic_write_text(path, "".join(valid_lines))

    handles = {temp: open(_annotation_path(workspace, iteration, temp), "a", encoding="utf-8") for temp in temps}
    try:
        backend = backend_factory(model)

        def _on_result(item) -> None:
            fh = handles[item.temperature]
            fh.write(json_line(annotation_to_json(item)) + "\n")
            fh.flush()
            if hooks.after_annotation is not None:
                hooks.after_annotation(iteration, item)

        annotate_corpus(
            backend,
            model,
            corpus,
            temps,
            workers=config.workers,
            template=config.annotate_template,
            max_output_tokens=config.max_output_tokens,
            seed=config.seed,
            skip=done,
            on_result=_on_result,
        )
    finally:
        for fh in handles.values():
            fh.close()


def _load_sets(config: LoopConfig, corpus: Dataset, workspace: Path, iteration: int) -> dict[float, AnnotationSet]:
    sets: dict[float, AnnotationSet] = {}
    for temp in sorted(config.filter.temperatures):
        path = _annotation_path(workspace, iteration, temp)
        if not path.exists():
            raise CorruptCheckpoint(f"missing annotation file {path}")
        annset = load_annotation_jsonl(path, temp, corpus.shas)
        if annset.input_count != len(corpus):
            raise CorruptCheckpoint(
                f"{path} covers {annset.input_count} of {len(corpus)} records; inference incomplete"
            )
        sets[temp] = annset
    return sets
