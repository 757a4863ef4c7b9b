"""Exception types shared across the toolkit.

Input and geometry problems subclass ValueError so that callers using
plain ``except ValueError`` keep working; solver failures get their own
branch of the hierarchy because they carry diagnostic state.
"""


class BornTomoError(Exception):
    """Base class for all borntomo errors."""


class InvalidInputError(BornTomoError, ValueError):
    """A value is outside the documented domain (non-finite, wrong sign, ...)."""


class GeometryError(InvalidInputError):
    """Sources, sensors, or phantom do not fit the imaging domain."""


class DimensionError(InvalidInputError):
    """Array shapes are inconsistent with the scene or operator."""


class ConvergenceError(BornTomoError):
    """An iterative linear solver failed to reach its tolerance.

    Attributes
    ----------
    residual : float
        Best relative residual achieved before giving up.
    iterations : int
        Iterations spent.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergenceError(BornTomoError):
    """The optimization produced a non-finite objective.

    Carries the last finite iterate so a partial result can still be written.
    """

    def __init__(self, message, last_iterate=None, iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations
