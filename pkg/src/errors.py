"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to: usage and configuration
problems exit with 2, every other runtime failure exits with 1.
"""

from typing import Optional


class WaunetError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 1


class DimensionError(WaunetError):
    """Tensor shapes or extents are incompatible with an operation."""


class LabelError(WaunetError):
    """A class id lies outside the valid range."""


class NumericError(WaunetError):
    """Non-finite values reached a kernel that requires finite input."""


class UsageError(WaunetError):
    """An API or command was called in a way it does not support."""

    exit_code = 2


class ConfigurationError(WaunetError):
    """A configuration violates its invariants."""

    exit_code = 2


class FormatError(WaunetError):
    """A file on disk is not in the expected format."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class GenerationError(WaunetError):
    """A phantom recipe could not be satisfied within the retry budget."""


class TrainingError(WaunetError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        super().__init__(message if parameter is None else f"{message} (parameter {parameter})")


class UndefinedMetricError(WaunetError):
    """A distance metric is undefined because a region is empty."""


class ThresholdError(WaunetError):
    """A verification run exceeded its error threshold."""
