"""Exception hierarchy."""


class VecchiaError(Exception):
    """Base class for all errors raised by genvecchia."""


class GeometryError(VecchiaError, ValueError):
    pass


class SizeError(VecchiaError, ValueError):
    """A problem exceeds a configured size cap (dense oracle, grid, simulation)."""


class KernelError(VecchiaError, ValueError):
    pass


class PlanError(VecchiaError, ValueError):
    pass


class ModelError(VecchiaError, ValueError):
    pass


class ConditioningError(VecchiaError, ArithmeticError):
    """A conditioning covariance block could not be factorized."""

    def __init__(self, msg, vertex=None):
        super().__init__(msg)
        self.vertex = vertex


class NotPositiveDefiniteError(VecchiaError, ArithmeticError):
    """Cholesky-type factorization hit a non-positive pivot."""

    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class SingularError(VecchiaError, ArithmeticError):
    pass


class FitError(VecchiaError, RuntimeError):
    def __init__(self, msg, last_valid=None):
        super().__init__(msg)
        self.last_valid = last_valid
