"""Exception and warning types shared across the package."""


class AirFcError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgument(AirFcError, ValueError):
    """An argument violates a documented precondition."""


class DimensionMismatch(AirFcError, ValueError):
    """Matrix shapes are incompatible with the configured chain."""


class UnsupportedModel(AirFcError, ValueError):
    """A model identifier names no known table entry."""


class ResourceLimit(AirFcError, RuntimeError):
    """A requested problem size exceeds a hard safety limit."""


class SolverDiverged(AirFcError, RuntimeError):
    """The alternating solver produced non-finite iterates.

    Carries the partial trace so callers can inspect where it blew up.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(AirFcError, ValueError):
    """An experiment configuration failed validation."""


class NumericalGuardWarning(UserWarning):
    """A linear system was regularized or truncated to stay solvable."""
