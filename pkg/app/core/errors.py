from typing import Any, Dict, Optional

from app.schemas import ErrorResponse


class PipelineError(Exception):
    """Base class for every failure the pipeline reports to a caller."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = {k: v for k, v in context.items() if v is not None}

    @property
    def code(self) -> str:
        return type(self).__name__

    def with_context(self, **context: Any) -> "PipelineError":
        for key, value in context.items():
            if value is not None:
                self.context.setdefault(key, value)
        return self

    def to_response(self) -> ErrorResponse:
        return ErrorResponse(error=self.code, message=self.message, context=self.context)

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"


# core-data
class MissingNetworkFile(PipelineError):
    pass


class RoiCountMismatch(PipelineError):
    def __init__(self, expected: int, found: int, **context: Any):
        super().__init__(
            f"expected {expected} ROI columns, found {found}",
            expected=expected,
            found=found,
            **context,
        )
        self.expected = expected
        self.found = found


class NonFiniteSample(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class InvalidLabel(PipelineError):
    pass


# reho
class DegenerateInput(PipelineError):
    pass


class NoDefinedReho(PipelineError):
    pass


# embedding
class SeriesTooShort(PipelineError):
    pass


class InvalidParams(PipelineError):
    pass


class DegenerateSeries(PipelineError):
    pass


# recurrence
class InvalidRate(PipelineError):
    pass


class IoError(PipelineError):
    pass


# connectivity
class SingularCovariance(PipelineError):
    def __init__(self, message: str, pivot: Optional[int] = None, **context: Any):
        super().__init__(message, pivot=pivot, **context)
        self.pivot = pivot


class NonPositiveDiagonal(PipelineError):
    pass


class ConvergenceFailure(PipelineError):
    pass


# classify
class EmptyData(PipelineError):
    pass


class TooFewSamples(PipelineError):
    pass


# synth
class InvalidSpec(PipelineError):
    pass


class NotPositiveDefinite(PipelineError):
    pass


# cli
class IncompleteRun(PipelineError):
    pass


class ConfigError(PipelineError):
    pass


class RunConflict(PipelineError):
    pass
