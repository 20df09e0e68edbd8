"""
Exception hierarchy shared by every gauss-distill module.

Each class carries the process exit code the command line maps it to.
"""

from typing import Optional


class GaussDistillError(Exception):
    """Base class for all expected failures."""

    exit_code = 1


class UsageError(GaussDistillError):
    """Invalid invocation, configuration or call contract."""

    exit_code = 1


class UnknownKeyError(UsageError):
    """Configuration key is not recognized."""

    def __init__(self, key: str) -> None:
        super().__init__(f"Unknown configuration key: {key}")
        self.key = key


class MissingKeyError(UsageError):
    """A required configuration key has no value."""

    def __init__(self, key: str) -> None:
        super().__init__(f"Missing required configuration key: {key}")
        self.key = key


class InvalidValueError(UsageError):
    """A configuration value could not be parsed or validated."""

    def __init__(self, key: str, value: str, reason: str) -> None:
        super().__init__(f"Invalid value for {key}: {value!r} ({reason})")
        self.key = key


class DataFormatError(GaussDistillError):
    """Input data is malformed, inconsistent or unusable."""

    exit_code = 2


class BadMagicError(DataFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(DataFormatError):
    """File payload is shorter than its header promises."""

    def __init__(self, path: str, expected: int, actual: int) -> None:
        super().__init__(
            f"Truncated payload in {path}: expected {expected} bytes, got {actual}"
        )
        self.expected = expected
        self.actual = actual


class UnsupportedFormatError(DataFormatError):
    """Unknown version, dtype code or label kind."""


class StaleCheckpointError(DataFormatError):
    """Checkpoint version or config hash does not match."""


class ShapeError(DataFormatError):
    """Matrix dimensions do not line up."""


class StateError(DataFormatError):
    """Cached forward state does not belong to the given parameters."""


class DegenerateTaskError(DataFormatError):
    """A task split holds a single class."""


class UndefinedMetricError(DataFormatError):
    """A metric is undefined for the given inputs."""


class IncompleteGridError(DataFormatError):
    """Aggregated results miss at least one (embedder, task, seed) cell."""


class WorldGenerationError(DataFormatError):
    """The synthetic world could not be generated."""


class NumericFailure(GaussDistillError):
    """NaN or infinite values reached a computation."""

    exit_code = 3


class TrainingAborted(NumericFailure):
    """Training hit a non-finite loss; carries the last finite checkpoint."""

    def __init__(self, message: str, checkpoint: Optional[object] = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint
