"""Exception hierarchy shared by every module."""


class RoughFlowError(Exception):
    pass


class InputError(RoughFlowError, ValueError):
    """Malformed or inconsistent arguments (shapes, grids, references)."""


class DivergenceError(RoughFlowError, ArithmeticError):
    """A solve blew up or the fixed-point map could not be made contracting."""


class ConvergenceError(RoughFlowError, ArithmeticError):
    """An iteration ran out of its budget before meeting its tolerance."""


class NumericalError(RoughFlowError, ArithmeticError):
    """Ill-conditioned linear algebra (near-singular transport, flows)."""


class StepSizeError(RoughFlowError, ArithmeticError):
    """A flow step moved too far off the constraint manifold."""


class ScaleRangeError(RoughFlowError, ValueError):
    """A convergence study metric underflowed at its coarsest scale."""
