"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations

from typing import Any, Sequence


class BibEnsembleError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BibEnsembleError):
    pass


# textkit / metrics


class EmptyWord(BibEnsembleError, ValueError):
    pass


class EmptyText(BibEnsembleError, ValueError):
    pass


class ZeroBase(BibEnsembleError, ZeroDivisionError):
    pass


class MissingBaseline(BibEnsembleError, ValueError):
    pass


# provider


class ProviderFailure(BibEnsembleError):
    """Any failure to obtain a completion."""


class TransportError(ProviderFailure):
    pass


class ProviderError(ProviderFailure):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class RetriesExhausted(ProviderFailure):
    def __init__(self, attempts: int, last_status: int | None = None) -> None:
        super().__init__(f"gave up after {attempts} attempts (last status {last_status})")
        self.attempts = attempts
        self.last_status = last_status


class UnsupportedParameter(ProviderFailure, ValueError):
    pass


class MissingApiKey(ProviderFailure):
    pass


class MissingReplayEntry(ProviderFailure, KeyError):
    def __init__(self, fingerprint: str) -> None:
        super().__init__(fingerprint)
        self.fingerprint = fingerprint

    def __str__(self) -> str:
        return f"no replay entry for fingerprint {self.fingerprint}"


# generation


class EmptyAxis(BibEnsembleError, ValueError):
    pass


class PartialGeneration(BibEnsembleError):
    def __init__(self, completed: Sequence[Any], failed_config: Any, cause: BaseException) -> None:
        super().__init__(f"generation failed for {failed_config}: {cause}")
        self.completed = list(completed)
        self.failed_config = failed_config
        self.cause = cause


# judging


class RatingParseError(BibEnsembleError, ValueError):
    pass


class MissingCriteria(RatingParseError):
    def __init__(self, names: Sequence[str]) -> None:
        super().__init__("missing scores for: " + ", ".join(names))
        self.names = list(names)


class OutOfRange(RatingParseError):
    def __init__(self, name: str, value: float) -> None:
        super().__init__(f"{name} score {value:g} is outside the rating scale")
        self.name = name
        self.value = value


class MalformedNumber(RatingParseError):
    pass


class JudgingFailed(BibEnsembleError):
    def __init__(self, candidate_id: str, cause: BaseException) -> None:
        super().__init__(f"judging {candidate_id} failed: {cause}")
        self.candidate_id = candidate_id
        self.cause = cause


class TooFewRatings(BibEnsembleError):
    def __init__(self, rated: int, failures: Sequence[JudgingFailed] = ()) -> None:
        super().__init__(f"only {rated} candidate(s) rated; at least 2 are needed")
        self.rated = rated
        self.failures = list(failures)


# selection / refinement


class UnknownCandidate(BibEnsembleError, KeyError):
    pass


class EmptySummary(BibEnsembleError):
    pass


# pipeline


class StageFailed(BibEnsembleError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class CorruptManifest(BibEnsembleError):
    pass
