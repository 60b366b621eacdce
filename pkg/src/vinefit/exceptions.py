"""Exception types shared across the package."""


class VinefitError(Exception):
    """Base class for all package errors."""


class DomainError(VinefitError, ValueError):
    """Parameter or input outside its valid domain."""


class SupportError(DomainError):
    """Data outside the support of the requested marginal family."""


class DegenerateDataError(VinefitError, ValueError):
    """Data carries no information for the requested fit (e.g. all pairs identical)."""


class ConvergenceError(VinefitError, RuntimeError):
    """Optimization or root finding failed to converge.

    Carries the best point found so far in ``best_point`` / ``best_value``
    when available.
    """

    def __init__(self, message, best_point=None, best_value=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_value = best_value


class EdgeFitError(VinefitError, RuntimeError):
    """A per-edge fit failed; tagged with the vine position it happened at."""

    def __init__(self, level, edge, cause):
        super().__init__(f"fit failed at level {level}, edge {edge}: {cause}")
        self.level = level
        self.edge = edge
        self.cause = cause


class ParameterCapError(VinefitError, RuntimeError):
    """Joint optimization refused because the parameter count exceeds the cap."""


class UnsupportedDimensionError(VinefitError, ValueError):
    """Operation not available at this dimension (e.g. plug-in sandwich for d > 3)."""


class SingularMatrixError(VinefitError, RuntimeError):
    """An information or bread matrix is numerically singular."""
