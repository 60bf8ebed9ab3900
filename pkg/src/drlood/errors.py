"""Exception types shared across the package."""


class DRLError(Exception):
    """Base class for all errors raised by drlood."""


class NumericError(DRLError, ArithmeticError):
    """A computation produced or received non-finite values, or diverged."""


class ShapeError(DRLError, ValueError):
    """Array dimensions are inconsistent with the operation."""


class ConfigError(DRLError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class DatasetParseError(DRLError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProbabilityClampWarning(UserWarning):
    """A probability was clamped to the floor before taking its logarithm."""
