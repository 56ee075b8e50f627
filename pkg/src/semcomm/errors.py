"""Exception hierarchy shared across the package."""


class SemcommError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SemcommError, ValueError):
    """Operand extents are incompatible (channel mismatch, spatial mismatch...)."""


class GeometryError(SemcommError, ValueError):
    """Kernel, stride or pooling geometry yields an empty or invalid output."""


class ContractError(SemcommError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(SemcommError, ValueError):
    """A file or wire format could not be produced or parsed."""


class CorruptionError(FormatError):
    """A payload failed validation after transmission."""


class StatisticsError(SemcommError, ValueError):
    """Too little data for a statistically meaningful estimate."""


class ConfigError(SemcommError, ValueError):
    """Invalid or unknown configuration."""


class StageError(SemcommError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
