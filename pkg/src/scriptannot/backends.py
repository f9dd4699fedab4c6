"""Model backends: prompt rendering, completion transport, and annotation parsing.

Two interchangeable backends speak the same ``complete(model, request)``
protocol: an HTTP client for completion-style providers, and a fully
deterministic in-process mock used by tests and offline runs.  On top of the
raw completion, :func:`annotate` turns one script into a structured draft (or
a typed parse failure), and :func:`annotate_corpus` fans that out over a
dataset and a set of sampling temperatures with a bounded worker pool.
"""
from __future__ import annotations

import bisect
import json
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Protocol
from urllib.parse import parse_qsl, urlsplit

from .corpus import LANGUAGES, Dataset, ScriptRecord
from .errors import (
    ConfigError,
    InvalidField,
    MissingContent,
    ProtocolMissingLogprobs,
    Transport,
    UnboundPlaceholder,
    UnknownTemplate,
)
from .util import stable_bits, unit_float

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from .filterpipe import AnnotationSet

ROLES = ("annotator", "judge")
FINISH_REASONS = ("stop", "length", "error")

# parse failure kinds
EMPTY = "Empty"
TRUNCATED = "Truncated"
INCOMPLETE_JSON = "IncompleteJson"
FAILURE_KINDS = (EMPTY, TRUNCATED, INCOMPLETE_JSON)

DEFAULT_WORKERS = min(16, os.cpu_count() or 1)
DEFAULT_MAX_OUTPUT_TOKENS = 1024


@dataclass(frozen=True)
class GenerationRequest:
    """One completion call: prompt plus sampling controls."""

    prompt: str
    temperature: float
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.prompt, str):
            raise InvalidField("prompt", "must be a string")
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidField("temperature", "must lie in [0, 2]")
        if not isinstance(self.max_output_tokens, int) or self.max_output_tokens < 1:
            raise InvalidField("max_output_tokens", "must be a positive integer")


@dataclass(frozen=True)
class Completion:
    """Raw backend output; logprobs are None when the provider sent none."""

    text: str
    finish_reason: str = "stop"
    label_token_logprob: float | None = None
    language_token_logprob: float | None = None

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise InvalidField("finish_reason", f"{self.finish_reason!r} not one of {FINISH_REASONS}")
        for name in ("label_token_logprob", "language_token_logprob"):
            value = getattr(self, name)
            if value is not None and value > 0:
                raise InvalidField(name, "log probability cannot exceed 0")


@dataclass(frozen=True)
class ModelHandle:
    """Addressable model: opaque identifier plus endpoint (URL or mock: URI)."""

    identifier: str
    endpoint: str
    role: str = "annotator"

    def __post_init__(self) -> None:
        if not self.identifier:
            raise InvalidField("identifier", "must be non-empty")
        if not self.endpoint:
            raise InvalidField("endpoint", "must be non-empty")
        if self.role not in ROLES:
            raise InvalidField("role", f"{self.role!r} not one of {ROLES}")

    def to_json_dict(self) -> dict:
        return {"identifier": self.identifier, "endpoint": self.endpoint, "role": self.role}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelHandle":
        return cls(identifier=obj["identifier"], endpoint=obj["endpoint"], role=obj.get("role", "annotator"))


@dataclass(frozen=True)
class AnnotationDraft:
    """Parsed annotator output for one (script, temperature) pair."""

    sha256: str
    temperature: float
    malicious: bool
    language: str
    summary: str
    raw_text: str
    label_probability: float | None = None
    language_probability: float | None = None

    def __post_init__(self) -> None:
        for name in ("label_probability", "language_probability"):
            value = getattr(self, name)
            if value is not None and not 0.0 < value <= 1.0:
                raise InvalidField(name, "must lie in (0, 1] when present")
        if self.language not in LANGUAGES:
            raise InvalidField("language", f"{self.language!r} not one of {LANGUAGES}")


@dataclass(frozen=True)
class ParseFailure:
    """Why one (script, temperature) response produced no usable draft."""

    sha256: str
    temperature: float
    kind: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise InvalidField("kind", f"{self.kind!r} not one of {FAILURE_KINDS}")


class Backend(Protocol):
    def complete(self, model: ModelHandle, request: GenerationRequest) -> Completion: ...


# -- prompt templates --------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")

TEMPLATES = ("annotate_simple", "annotate_detailed", "judge_coherence", "judge_pairwise")


@lru_cache(maxsize=256)
def _read_template(name: str, dir_key: str | None) -> str:
    if dir_key is not None:
        path = Path(dir_key) / f"{name}.txt"
        if not path.is_file():
            raise UnknownTemplate(name)
        return path.read_text(encoding="utf-8")
    try:
        return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise UnknownTemplate(name) from exc


def load_template(name: str, prompts_dir: Path | str | None = None) -> str:
    """Return the raw template text from the prompts directory or package assets."""
    return _read_template(name, str(prompts_dir) if prompts_dir is not None else None)


def render_prompt(template_name: str, variables: Mapping[str, object], prompts_dir: Path | str | None = None) -> str:
    """Substitute {{name}} placeholders; every placeholder must be bound."""
    text = load_template(template_name, prompts_dir)

    def _sub(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in variables:
            raise UnboundPlaceholder(key)
        return str(variables[key])

    return _PLACEHOLDER_RE.sub(_sub, text)


# -- response parsing --------------------------------------------------------


def _balanced_object(text: str, start: int) -> tuple[str | None, bool]:
    """Extract the first balanced {...} starting at `start`.

    Returns (slice, terminated).  An opening brace that never closes reports
    terminated=False so callers can classify it as a truncation.
    """
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1], True
    return None, False


def parse_annotation_text(text: str, finish_reason: str = "stop") -> tuple[dict | None, str | None, str]:
    """Classify raw annotator output.

    Returns (fields, failure_kind, detail): exactly one of fields/failure_kind
    is set.  Every possible response lands in exactly one bucket.
    """
    if not text or not text.strip():
        return None, EMPTY, "blank response"
    if finish_reason == "length":
        return None, TRUNCATED, "generation hit the output token limit"
    start = text.find("{")
    if start < 0:
        return None, INCOMPLETE_JSON, "no JSON object in response"
    blob, terminated = _balanced_object(text, start)
    if not terminated:
        return None, TRUNCATED, "JSON object never closes"
    try:
        obj = json.loads(blob)
    except json.JSONDecodeError:
        return None, INCOMPLETE_JSON, "unparsable JSON object"
    if not isinstance(obj, dict):
        return None, INCOMPLETE_JSON, "top-level JSON value is not an object"
    malicious = obj.get("malicious")
    language = obj.get("language")
    summary = obj.get("summary")
    if not isinstance(malicious, bool):
        return None, INCOMPLETE_JSON, "field 'malicious' missing or not a boolean"
    if language not in LANGUAGES:
        return None, INCOMPLETE_JSON, "field 'language' missing or unrecognized"
    if not isinstance(summary, str) or not summary.strip():
        return None, INCOMPLETE_JSON, "field 'summary' missing or empty"
    return {"malicious": malicious, "language": language, "summary": summary}, None, ""


def parse_judge_verdict(text: str) -> bool | None:
    """Map a coherence-judge response to a malicious/benign verdict, or None."""
    if not text or not text.strip():
        return None
    start = text.find("{")
    if start >= 0:
        blob, terminated = _balanced_object(text, start)
        if terminated:
            try:
                obj = json.loads(blob)
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict) and isinstance(obj.get("malicious"), bool):
                return obj["malicious"]
    lowered = text.lower()
    if "benign" in lowered or "not malicious" in lowered:
        return False
    if "malicious" in lowered:
        return True
    return None


def parse_pairwise_verdict(text: str) -> str | None:
    """Map a pairwise-judge response to 'A' or 'B', or None when unreadable."""
    if not text or not text.strip():
        return None
    start = text.find("{")
    if start >= 0:
        blob, terminated = _balanced_object(text, start)
        if terminated:
            try:
                obj = json.loads(blob)
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict):
                winner = obj.get("winner")
                if isinstance(winner, str) and winner.strip().upper() in ("A", "B"):
                    return winner.strip().upper()
    match = re.search(r"\b([AB])\b", text.strip())
    if match:
        return match.group(1)
    return None


# -- deterministic mock backend ----------------------------------------------

_MALICIOUS_SUMMARIES = (
    "Downloads a remote payload and launches it after disabling security tooling.",
    "Collects stored credentials and exfiltrates them to an external host.",
    "Installs a persistence mechanism and opens a reverse shell to a remote server.",
    "Encrypts user documents and drops a ransom note demanding payment.",
    "Injects itself into another process and hides its artifacts from inspection.",
)
_BENIGN_SUMMARIES = (
    "Performs routine log rotation and cleanup of temporary files.",
    "Collects a system inventory for a legitimate administrative report.",
    "Automates a software build and copies artifacts to a staging folder for maintenance.",
    "Checks service health and restarts it as part of scheduled maintenance.",
    "Synchronizes configuration files as part of routine housekeeping.",
)
_MALICIOUS_CUES = ("payload", "exfiltrat", "reverse shell", "ransom", "injects", "disabling security", "hides")
_BENIGN_CUES = ("routine", "legitimate", "maintenance", "housekeeping", "staging", "cleanup", "inventory")

_PREFIXES = ("", "Here is the analysis:\n", "JSON: ")

_HINT_LANG_RE = re.compile(r"#lang=(sh|bat|js|ps|py)\b")
_HINT_MAL_RE = re.compile(r"#mal=([01])\b")


def summary_for(malicious: bool, *salt: object) -> str:
    """Deterministic canned summary whose wording carries the label's cues."""
    pool = _MALICIOUS_SUMMARIES if malicious else _BENIGN_SUMMARIES
    return pool[stable_bits("summary", malicious, *salt) % len(pool)]


def marker_verdict(summary: str) -> bool:
    """Classify a summary as malicious/benign from its cue phrases."""
    lowered = summary.lower()
    mal = sum(1 for cue in _MALICIOUS_CUES if cue in lowered)
    ben = sum(1 for cue in _BENIGN_CUES if cue in lowered)
    return mal > ben


def mock_judge_verdict(summary: str, *, policy: str = "marker", fail: float = 0.0, seed: int = 0) -> bool | None:
    """Pure form of the mock coherence judge; None models an unusable judge call.

    Shared by the mock backend and by test oracles so both sides agree on
    exactly which summaries the judge rejects or fails on.
    """
    if fail > 0 and unit_float("judge-fail", seed, summary) < fail:
        return None
    if policy == "always_true":
        return True
    if policy == "always_false":
        return False
    return marker_verdict(summary)


def _extract_block(prompt: str, name: str) -> str | None:
    open_tag = f"<<<{name}\n"
    close_tag = f"\n{name}>>>"
    start = prompt.find(open_tag)
    if start < 0:
        return None
    start += len(open_tag)
    end = prompt.find(close_tag, start)
    if end < 0:
        return None
    return prompt[start:end]


def _parse_mock_endpoint(endpoint: str) -> dict[str, str]:
    if not endpoint.startswith("mock:"):
        raise ConfigError(f"not a mock endpoint: {endpoint!r}")
    rest = endpoint[len("mock:") :]
    query = rest.split("?", 1)[1] if "?" in rest else ""
    return dict(parse_qsl(query))


class MockBackend:
    """Deterministic stand-in for a completion provider.

    All behavior is a pure function of (model identifier, prompt, temperature,
    seed) plus fault rates encoded in the model's ``mock:`` endpoint query
    string.  Annotator endpoints understand ``empty``, ``truncated``,
    ``malformed``, ``flip``, ``lowconf``, ``incoherent`` and ``seed``; judge
    endpoints understand ``policy`` (marker | first | longer | coin |
    always_true | always_false), ``fail``, ``garble`` and ``seed``.

    Scripts may carry ``#lang=xx`` / ``#mal=0|1`` hints in their content;
    when present the mock's base prediction follows them, which lets tests
    steer ground truth while keeping every fault injection deterministic.
    """

    def complete(self, model: ModelHandle, request: GenerationRequest) -> Completion:
        params = _parse_mock_endpoint(model.endpoint)
        if model.role == "judge":
            return self._judge(model, request, params)
        return self._annotate(model, request, params)

    # annotator behavior

    def _annotate(self, model: ModelHandle, request: GenerationRequest, params: dict[str, str]) -> Completion:
        rate = lambda key: float(params.get(key, "0"))  # noqa: E731 - tiny local accessor
        seed = int(params.get("seed", "0")) if request.seed is None else request.seed
        key = (model.identifier, request.prompt, round(request.temperature, 6), seed)
        base_key = (model.identifier, request.prompt, seed)

        if unit_float("empty", *key) < rate("empty"):
            return Completion(text="", finish_reason="stop")

        mal_hint = _HINT_MAL_RE.search(request.prompt)
        base_label = mal_hint.group(1) == "1" if mal_hint else unit_float("label", *base_key) < 0.5
        flip = unit_float("flip", *key) < rate("flip") * request.temperature
        label = base_label != flip

        lang_hint = _HINT_LANG_RE.search(request.prompt)
        language = lang_hint.group(1) if lang_hint else LANGUAGES[stable_bits("lang", *base_key) % len(LANGUAGES)]

        incoherent = unit_float("incoherent", *key) < rate("incoherent")
        summary = summary_for(label != incoherent, *key)

        lowconf = unit_float("lowconf", *key) < rate("lowconf")
        u = unit_float("prob", *key)
        probability = 0.5 + 0.4 * u if lowconf else 0.93 + 0.07 * u * u
        lang_probability = 0.9 + 0.1 * unit_float("langprob", *key)

        body = json.dumps({"malicious": label, "language": language, "summary": summary})
        prefix = _PREFIXES[stable_bits("prefix", *key) % len(_PREFIXES)]
        text = prefix + body

        if unit_float("trunc", *key) < rate("truncated"):
            return Completion(text=text[: max(1, int(len(text) * 0.6))], finish_reason="length")
        if unit_float("malformed", *key) < rate("malformed"):
            if stable_bits("malform-kind", *key) % 2 == 0:
                return Completion(text="The script could not be assessed.", finish_reason="stop")
            return Completion(text=json.dumps({"malicious": "maybe", "language": language}), finish_reason="stop")

        return Completion(
            text=text,
            finish_reason="stop",
            label_token_logprob=math.log(probability),
            language_token_logprob=math.log(lang_probability),
        )

    # judge behavior

    def _judge(self, model: ModelHandle, request: GenerationRequest, params: dict[str, str]) -> Completion:
        policy = params.get("policy", "marker")
        fail = float(params.get("fail", "0"))
        garble = float(params.get("garble", "0"))
        seed = int(params.get("seed", "0")) if request.seed is None else request.seed

        summary_a = _extract_block(request.prompt, "SUMMARY_A")
        summary_b = _extract_block(request.prompt, "SUMMARY_B")
        if summary_a is not None and summary_b is not None:
            if garble > 0 and unit_float("judge-garble", seed, request.prompt) < garble:
                return Completion(text="no clear preference either way", finish_reason="stop")
            if policy == "first":
                winner = "A"
            elif policy == "longer":
                winner = "A" if len(summary_a) >= len(summary_b) else "B"
            elif policy == "coin":
                winner = "AB"[stable_bits("judge-coin", seed, request.prompt) % 2]
            else:  # marker: prefer the summary that reads as malicious, A on ties
                winner = "A" if marker_verdict(summary_a) or not marker_verdict(summary_b) else "B"
            return Completion(text=json.dumps({"winner": winner}), finish_reason="stop")

        summary = _extract_block(request.prompt, "SUMMARY")
        if summary is None:
            return Completion(text="", finish_reason="stop")
        verdict = mock_judge_verdict(summary, policy=policy, fail=fail, seed=seed)
        if verdict is None:
            return Completion(text="unable to form a view on this one", finish_reason="stop")
        return Completion(text=json.dumps({"malicious": verdict}), finish_reason="stop")


# -- HTTP backend --------------------------------------------------------------

_TRANSIENT_STATUSES = {429}


@dataclass(frozen=True)
class HttpOptions:
    """Transport policy for the HTTP backend."""

    auth_token_env: str | None = None
    max_retries: int = 3
    backoff_base_ms: int = 500
    timeout_s: float = 60.0
    require_logprobs: bool = True


def _value_offset(text: str, key: str) -> int | None:
    match = re.search(r'"' + re.escape(key) + r'"\s*:\s*"?', text)
    if not match:
        return None
    return match.end()


def _logprob_at(logprobs: dict, text: str, key: str) -> float | None:
    offsets = logprobs.get("text_offset")
    token_logprobs = logprobs.get("token_logprobs")
    if not offsets or not token_logprobs:
        return None
    pos = _value_offset(text, key)
    if pos is None:
        return None
    idx = bisect.bisect_right(offsets, pos) - 1
    if idx < 0 or idx >= len(token_logprobs):
        return None
    value = token_logprobs[idx]
    if value is None:
        return None
    return min(float(value), 0.0)


class HttpBackend:
    """Completion-style HTTP client with bounded retries and backoff.

    Retries transport faults, 429 and 5xx responses up to ``max_retries``
    attempts with exponential backoff; other 4xx responses fail immediately.
    The bearer token, when configured, is read from the environment at call
    time and never stored or logged.
    """

    def __init__(
        self,
        options: HttpOptions | None = None,
        session=None,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        import requests

        self.options = options or HttpOptions()
        self._session = session or requests.Session()
        self._sleep = sleeper

    def complete(self, model: ModelHandle, request: GenerationRequest) -> Completion:
        import requests

        payload: dict = {
            "model": model.identifier,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "logprobs": 1,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {}
        if self.options.auth_token_env:
            token = os.environ.get(self.options.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"

        attempts = max(1, self.options.max_retries)
        last_detail, last_status = "no attempt made", None
        for attempt in range(attempts):
            try:
                response = self._session.post(
                    model.endpoint, json=payload, headers=headers, timeout=self.options.timeout_s
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_detail, last_status = f"transport failure: {exc.__class__.__name__}", None
            else:
                status = response.status_code
                if status in _TRANSIENT_STATUSES or status >= 500:
                    last_detail, last_status = "retriable provider response", status
                elif status >= 400:
                    raise Transport("provider rejected the request", status=status)
                else:
                    return self._parse(model, response.json())
            if attempt + 1 < attempts:
                self._sleep(self.options.backoff_base_ms / 1000.0 * (2**attempt))
        raise Transport(f"gave up after {attempts} attempts: {last_detail}", status=last_status)

    def _parse(self, model: ModelHandle, obj: dict) -> Completion:
        try:
            choice = obj["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise Transport(f"malformed provider response: {exc!r}") from exc
        finish = choice.get("finish_reason", "stop")
        if finish not in FINISH_REASONS:
            finish = "error"
        logprobs = choice.get("logprobs")
        label_lp = lang_lp = None
        if isinstance(logprobs, dict):
            label_lp = _logprob_at(logprobs, text, "malicious")
            lang_lp = _logprob_at(logprobs, text, "language")
        if model.role == "annotator" and self.options.require_logprobs and label_lp is None:
            fields, _, _ = parse_annotation_text(text, finish)
            if fields is not None:
                # only a structurally valid annotation is required to carry them
                raise ProtocolMissingLogprobs()
        return Completion(
            text=text, finish_reason=finish, label_token_logprob=label_lp, language_token_logprob=lang_lp
        )


def make_backend(model: ModelHandle, http_options: HttpOptions | None = None) -> Backend:
    """Pick the backend implementation for a handle's endpoint scheme."""
    if model.endpoint.startswith("mock:"):
        return MockBackend()
    scheme = urlsplit(model.endpoint).scheme
    if scheme in ("http", "https"):
        return HttpBackend(options=http_options)
    raise ConfigError(f"unsupported endpoint scheme in {model.endpoint!r}")


# -- high-level ops ------------------------------------------------------------


def generate(model: ModelHandle, request: GenerationRequest, backend: Backend | None = None) -> Completion:
    """Run one completion against the handle's backend."""
    return (backend or make_backend(model)).complete(model, request)


def annotate(
    backend: Backend,
    model: ModelHandle,
    record: ScriptRecord,
    temperature: float,
    *,
    template: str = "annotate_simple",
    prompts_dir: Path | str | None = None,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    seed: int | None = None,
) -> AnnotationDraft | ParseFailure:
    """Annotate one script at one temperature.

    Returns a draft on success and a ParseFailure otherwise; transport
    failures (after the backend's retries) still raise.
    """
    if record.content is None:
        raise MissingContent(record.sha256)
    prompt = render_prompt(template, {"content": record.content}, prompts_dir)
    completion = backend.complete(
        model, GenerationRequest(prompt=prompt, temperature=temperature, max_output_tokens=max_output_tokens, seed=seed)
    )
    fields, failure_kind, detail = parse_annotation_text(completion.text, completion.finish_reason)
    if fields is None:
        assert failure_kind is not None
        return ParseFailure(sha256=record.sha256, temperature=temperature, kind=failure_kind, detail=detail)
    label_probability = (
        math.exp(completion.label_token_logprob) if completion.label_token_logprob is not None else None
    )
    language_probability = (
        math.exp(completion.language_token_logprob) if completion.language_token_logprob is not None else None
    )
    return AnnotationDraft(
        sha256=record.sha256,
        temperature=temperature,
        malicious=fields["malicious"],
        language=fields["language"],
        summary=fields["summary"],
        raw_text=completion.text,
        label_probability=label_probability,
        language_probability=language_probability,
    )


def annotate_corpus(
    backend: Backend,
    model: ModelHandle,
    dataset: Dataset,
    temperatures: Iterable[float],
    *,
    workers: int | None = None,
    template: str = "annotate_simple",
    prompts_dir: Path | str | None = None,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    seed: int | None = None,
    skip: set[tuple[str, float]] | None = None,
    on_result: Callable[[AnnotationDraft | ParseFailure], None] | None = None,
) -> dict[float, "AnnotationSet"]:
    """Annotate a dataset at each temperature through a bounded worker pool.

    Results are keyed and ordered by the dataset's record order regardless of
    completion order, so output is deterministic for a deterministic backend.
    ``skip`` names (sha256, temperature) pairs to leave out (already done);
    ``on_result`` observes each fresh result serially as it completes.
    """
    from .filterpipe import AnnotationSet  # deferred: filterpipe imports our types

    temps = sorted(set(float(t) for t in temperatures))
    skip = skip or set()
    tasks = [(rec, t) for t in temps for rec in dataset if (rec.sha256, t) not in skip]
    results: dict[tuple[str, float], AnnotationDraft | ParseFailure] = {}

    def _one(rec: ScriptRecord, temp: float) -> AnnotationDraft | ParseFailure:
        return annotate(
            backend,
            model,
            rec,
            temp,
            template=template,
            prompts_dir=prompts_dir,
            max_output_tokens=max_output_tokens,
            seed=seed,
        )

    pool_size = max(1, workers if workers is not None else DEFAULT_WORKERS)
    if tasks:
        with ThreadPoolExecutor(max_workers=pool_size) as pool:
            futures = {pool.submit(_one, rec, temp): (rec.sha256, temp) for rec, temp in tasks}
            for future in as_completed(futures):
                result = future.result()
                results[futures[future]] = result
                if on_result is not None:
                    on_result(result)

    out: dict[float, AnnotationSet] = {}
    for temp in temps:
        drafts: dict[str, AnnotationDraft] = {}
        failures: dict[str, ParseFailure] = {}
        for rec in dataset:
            item = results.get((rec.sha256, temp))
            if item is None:
                continue
            if isinstance(item, AnnotationDraft):
                drafts[rec.sha256] = item
            else:
                failures[rec.sha256] = item
        out[temp] = AnnotationSet(temperature=temp, drafts=drafts, failures=failures)
    return out
