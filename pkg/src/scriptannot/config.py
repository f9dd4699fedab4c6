"""Run configuration: one JSON file that wires models, filtering, and the loop.

Secrets never live in the config file.  The HTTP auth token is named by
environment variable — either via "auth_token_env" or an "${VAR}" reference —
and is resolved only at request time.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .backends import HttpOptions, ModelHandle
from .errors import ConfigError
from .filterpipe import FilterConfig
from .selfloop import FinetunerConfig, LoopConfig

_ENV_REF_RE = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")

DEFAULT_ANNOTATOR = ModelHandle(
    identifier="mock-annotator",
    endpoint="mock:annotator?empty=0.02&truncated=0.01&malformed=0.02&flip=0.08&lowconf=0.06&incoherent=0.03",
    role="annotator",
)
DEFAULT_JUDGE = ModelHandle(identifier="mock-judge", endpoint="mock:judge?policy=marker", role="judge")


@dataclass(frozen=True)
class LoopSettings:
    """The loop-specific half of a run config."""

    k: int
    workspace: Path
    seed_dataset: Path
    unlabeled_corpus: Path
    finetuner: FinetunerConfig = field(default_factory=FinetunerConfig)
    hyperparameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    """Validated settings shared by every CLI command."""

    annotator: ModelHandle = DEFAULT_ANNOTATOR
    judge: ModelHandle = DEFAULT_JUDGE
    filter: FilterConfig = field(default_factory=FilterConfig)
    http: HttpOptions = field(default_factory=HttpOptions)
    loop: LoopSettings | None = None
    seed: int = 0
    workers: int | None = None
    prompts_dir: Path | None = None
    annotate_template: str = "annotate_simple"
    max_output_tokens: int = 1024

    def filter_with_judge(self) -> FilterConfig:
        """The filter config with the run's judge handle attached."""
        if self.filter.judge is not None:
            return self.filter
        return FilterConfig(
            temperatures=self.filter.temperatures,
            alpha=self.filter.alpha,
            select_temperature=self.filter.select_temperature,
            judge=self.judge,
            consensus_on_language=self.filter.consensus_on_language,
        )

    def loop_config(self) -> LoopConfig:
        if self.loop is None:
            raise ConfigError("config has no 'loop' section")
        return LoopConfig(
            k=self.loop.k,
            filter=self.filter_with_judge(),
            seed_dataset=self.loop.seed_dataset,
            unlabeled_corpus=self.loop.unlabeled_corpus,
            workspace=self.loop.workspace,
            finetuner=self.loop.finetuner,
            hyperparameters=self.loop.hyperparameters,
            workers=self.workers if self.workers is not None else 4,
            seed=self.seed,
            annotate_template=self.annotate_template,
            max_output_tokens=self.max_output_tokens,
        )


def _parse_handle(obj: dict, fallback_role: str) -> ModelHandle:
    if not isinstance(obj, dict) or "identifier" not in obj or "endpoint" not in obj:
        raise ConfigError("model handles need 'identifier' and 'endpoint'")
    return ModelHandle(
        identifier=obj["identifier"], endpoint=obj["endpoint"], role=obj.get("role", fallback_role)
    )


def _parse_http(obj: dict) -> HttpOptions:
    token_env = obj.get("auth_token_env")
    token_ref = obj.get("auth_token")
    if token_ref is not None:
        match = _ENV_REF_RE.fullmatch(str(token_ref))
        if not match:
            raise ConfigError("auth_token must be an ${ENV_VAR} reference, never a literal secret")
        token_env = match.group(1)
    return HttpOptions(
        auth_token_env=token_env,
        max_retries=int(obj.get("max_retries", 3)),
        backoff_base_ms=int(obj.get("backoff_base_ms", 500)),
        timeout_s=float(obj.get("timeout_s", 60.0)),
        require_logprobs=bool(obj.get("require_logprobs", True)),
    )


def _require_path(value: object, key: str, base: Path, must_exist: bool) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"'{key}' must be a non-empty path string")
    path = (base / value).resolve() if not Path(value).is_absolute() else Path(value)
    if must_exist and not path.exists():
        raise ConfigError(f"'{key}' does not resolve to an existing path: {path}")
    return path


def load_run_config(path: Path | str | None) -> RunConfig:
    """Load and validate a RunConfig; None yields the all-mock defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    base = path.parent

    annotator = _parse_handle(obj["annotator"], "annotator") if "annotator" in obj else DEFAULT_ANNOTATOR
    judge = _parse_handle(obj["judge"], "judge") if "judge" in obj else DEFAULT_JUDGE
    filter_cfg = FilterConfig.from_json_dict(obj["filter"]) if "filter" in obj else FilterConfig()
    http = _parse_http(obj.get("http", {}))

    prompts_dir = None
    if obj.get("prompts_dir"):
        prompts_dir = _require_path(obj["prompts_dir"], "prompts_dir", base, must_exist=True)

    loop = None
    if "loop" in obj:
        raw = obj["loop"]
        if not isinstance(raw, dict):
            raise ConfigError("'loop' must be an object")
        for key in ("k", "workspace", "seed_dataset", "unlabeled_corpus"):
            if key not in raw:
                raise ConfigError(f"'loop.{key}' is required")
        loop = LoopSettings(
            k=int(raw["k"]),
            workspace=_require_path(raw["workspace"], "loop.workspace", base, must_exist=False),
            seed_dataset=_require_path(raw["seed_dataset"], "loop.seed_dataset", base, must_exist=True),
            unlabeled_corpus=_require_path(raw["unlabeled_corpus"], "loop.unlabeled_corpus", base, must_exist=True),
            finetuner=FinetunerConfig.from_json_dict(raw.get("finetuner", {})),
            hyperparameters=dict(raw.get("hyperparameters", {})),
        )

    workers = obj.get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        raise ConfigError("'workers' must be a positive integer")

    return RunConfig(
        annotator=annotator,
        judge=judge,
        filter=filter_cfg,
        http=http,
        loop=loop,
        seed=int(obj.get("seed", 0)),
        workers=workers,
        prompts_dir=prompts_dir,
        annotate_template=obj.get("annotate_template", "annotate_simple"),
        max_output_tokens=int(obj.get("max_output_tokens", 1024)),
    )
