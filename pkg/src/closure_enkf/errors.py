"""Exception types raised across the package."""


class ClosureEnKFError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ClosureEnKFError, ValueError):
    """Invalid or inconsistent configuration."""


class DimensionError(ClosureEnKFError, ValueError):
    """Array shapes do not agree."""


class SingularityError(ClosureEnKFError, ValueError):
    """A linear system is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DivergenceError(ClosureEnKFError, FloatingPointError):
    """Non-finite values appeared in the ensemble."""

    def __init__(self, message, time_index=None, member=None):
        super().__init__(message)
        self.time_index = time_index
        self.member = member


class UndefinedMetricError(ClosureEnKFError, ValueError):
    """A metric is undefined for the given input (e.g. zero denominator)."""
