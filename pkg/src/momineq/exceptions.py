"""Exception hierarchy shared across the package."""


class MomIneqError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MomIneqError, ValueError):
    pass


class EmptyData(MomIneqError, ValueError):
    pass


class RaggedRows(MomIneqError, ValueError):
    pass


class ShapeMismatch(MomIneqError, ValueError):
    pass


class DimensionTooLarge(MomIneqError, ValueError):
    """Raised when a combinatorial routine would exceed its enumeration cap."""


class Infeasible(MomIneqError):
    """The constraint set of a projection problem is empty."""


class MaxIterations(MomIneqError):
    pass


class AnchorNotActive(MomIneqError, ValueError):
    pass


class ZeroAnchorRow(MomIneqError, ValueError):
    pass


class EvaluationFailure(MomIneqError):
    pass


class SingularG(MomIneqError, ValueError):
    pass


class NonFiniteUtility(MomIneqError, ValueError):
    pass


class NoConvergence(MomIneqError):
    """An iterative routine stopped before meeting its tolerance.

    Attributes
    ----------
    iterations : int
        Iterations performed before giving up.
    residual : float
        Final value of the convergence criterion.
    """

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class LineSearchFailure(NoConvergence):
    pass


class UnknownProduct(MomIneqError, KeyError):
    pass


class EmptyEvents(MomIneqError, ValueError):
    pass


class ConfigInvalid(MomIneqError, ValueError):
    pass


class SchemaError(MomIneqError, ValueError):
    """Input file does not match the expected column schema."""


class SliceNotOnGrid(MomIneqError, ValueError):
    pass


class IoFailure(MomIneqError, OSError):
    """Reading or writing a file failed."""
