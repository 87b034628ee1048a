"""Exception hierarchy shared by the solvers, the inversion and the CLI."""


class FiberTwistError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteField(FiberTwistError, ArithmeticError):
    """A solver produced inf/nan values (blow-up or instability)."""


class DimensionMismatch(FiberTwistError, ValueError):
    """A coefficient profile or data array does not fit the grid."""


class GeometryError(FiberTwistError, ValueError):
    """Requested subdomain is not covered by the supplied data."""


class NoConvergence(FiberTwistError):
    """An iteration hit its iteration cap.

    Attributes
    ----------
    iterations : int
    residual : float
        Last successive-iterate distance.
    history : list of float
    partial : object
        Whatever the caller could salvage (last iterate, partial report).
    """

    def __init__(self, message, iterations=0, residual=float("nan"),
                 history=None, partial=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.history = list(history or [])
        self.partial = partial


class EmptySupport(FiberTwistError, ValueError):
    """Relative error requested for a profile that vanishes everywhere."""


class HypothesisViolated(FiberTwistError):
    """Input to a diagnostic does not satisfy the assumptions it checks under."""


class DegenerateDenominator(FiberTwistError):
    """Distinct coefficients produced coinciding traces."""


class ConfigError(FiberTwistError, ValueError):
    """Invalid run configuration or malformed input file."""
