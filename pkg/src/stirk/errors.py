"""Exception hierarchy shared across the package."""


class StirkError(Exception):
    """Base class for all package errors."""


class InvalidStateError(StirkError, ValueError):
    """A state or input vector contains non-finite entries or has the wrong size."""


class DivergenceError(StirkError, FloatingPointError):
    """Numerical blow-up during integration or iteration.

    ``step`` records where it happened (integration step or Polyflow iterate).
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConditioningError(StirkError, ArithmeticError):
    """Similarity transform is too ill-conditioned to invert reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class UndefinedMetricError(StirkError, ZeroDivisionError):
    """Metric is undefined for the given reference (for example zero norm)."""


class SchemaError(StirkError, ValueError):
    """Serialized file is malformed, truncated, or of an unsupported version."""


class DimensionError(StirkError, ValueError):
    """Array shapes are mutually inconsistent."""


class UnsupportedConstraintError(StirkError, NotImplementedError):
    """Requested constraint type is not supported by the controller."""


class ConfigError(StirkError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
