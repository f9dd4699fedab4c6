"""Exception types shared across the pipeline.

Every domain failure raised by this package derives from PipelineError so
callers (and the CLI) can distinguish "your inputs/state are bad" from
programming errors.  Each class keeps a short, stable name that also serves
as the machine-readable error code.
"""
from __future__ import annotations


class PipelineError(Exception):
    """Base class for all domain errors raised by scriptannot."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- corpus ----------------------------------------------------------------

class MalformedLine(PipelineError):
    """A JSONL line could not be parsed as a JSON object."""

    def __init__(self, lineno: int, detail: str = "") -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: not a valid JSON object" + (f" ({detail})" if detail else ""))


class DuplicateSha(PipelineError):
    """The same sha256 appeared twice within one dataset."""

    def __init__(self, sha256: str) -> None:
        self.sha256 = sha256
        super().__init__(f"duplicate sha256 {sha256}")


class InvalidField(PipelineError):
    """A record field failed validation."""

    def __init__(self, field: str, detail: str) -> None:
        self.field = field
        super().__init__(f"invalid field {field!r}: {detail}")


class MissingContent(PipelineError):
    """An operation needed script content but the record carries none."""

    def __init__(self, sha256: str) -> None:
        self.sha256 = sha256
        super().__init__(f"record {sha256} has no content")


# -- backends --------------------------------------------------------------

class UnknownTemplate(PipelineError):
    """Requested prompt template does not exist."""

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"unknown prompt template {name!r}")


class UnboundPlaceholder(PipelineError):
    """A template placeholder had no value supplied."""

    def __init__(self, placeholder: str) -> None:
        self.placeholder = placeholder
        super().__init__(f"placeholder {{{{{placeholder}}}}} is unbound")


class Transport(PipelineError):
    """A backend call failed after exhausting retries."""

    def __init__(self, detail: str, status: int | None = None) -> None:
        self.status = status
        super().__init__(detail if status is None else f"{detail} (status {status})")


class ProtocolMissingLogprobs(PipelineError):
    """The backend response omitted log-probabilities that were required."""

    def __init__(self, detail: str = "response carried no usable logprobs") -> None:
        super().__init__(detail)


# -- filtering -------------------------------------------------------------

class MissingConfidence(PipelineError):
    """A draft reached the confidence stage without a label probability."""

    def __init__(self, sha256: str) -> None:
        self.sha256 = sha256
        super().__init__(f"draft {sha256} has no label probability")


# -- self-training loop ----------------------------------------------------

class FinetuneFailed(PipelineError):
    """The fine-tuning provider rejected or failed a job."""

    def __init__(self, detail: str, iteration: int | None = None) -> None:
        self.iteration = iteration
        prefix = f"iteration {iteration}: " if iteration is not None else ""
        super().__init__(prefix + detail)


class FinetuneTimeout(PipelineError):
    """Polling a fine-tune job exceeded the configured deadline."""


class CorruptCheckpoint(PipelineError):
    """Workspace state files are unreadable or internally inconsistent."""


class VersionMismatch(PipelineError):
    """Workspace was written by an incompatible manifest version."""

    def __init__(self, found: object, expected: int) -> None:
        self.found = found
        self.expected = expected
        super().__init__(f"manifest version {found!r}, expected {expected}")


class WorkspaceLocked(PipelineError):
    """Another live process holds the workspace lock."""


# -- evaluation ------------------------------------------------------------

class MissingTruth(PipelineError):
    """A prediction has no matching ground-truth record."""

    def __init__(self, sha256: str) -> None:
        self.sha256 = sha256
        super().__init__(f"no ground truth for {sha256}")


class EmptyIntersection(PipelineError):
    """Two prediction sets share no sha256s to compare."""


class NoDecisiveVotes(PipelineError):
    """Every vote was a tie; win rates are undefined."""


class UnparseableVerdict(PipelineError):
    """A judge response could not be mapped to a verdict."""


# -- service ---------------------------------------------------------------

class UnknownSession(PipelineError):
    """No session with that id."""


class UnknownPair(PipelineError):
    """Pair id is not part of the session's assignment."""


class DuplicateVote(PipelineError):
    """This evaluator already voted on this pair."""


class InvalidChoice(PipelineError):
    """Vote choice must be A, B, or equal."""


# -- configuration ---------------------------------------------------------

class ConfigError(PipelineError):
    """Run configuration failed validation."""
