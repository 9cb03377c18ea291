"""Controlled rough paths: lifts, sewing, RDE solvers and path-space flows."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConvergenceError,
    DivergenceError,
    InputError,
    NumericalError,
    RoughFlowError,
    ScaleRangeError,
    StepSizeError,
)

from .controlled import ControlledPath  # noqa: E402,F401
from .oneform import OneForm  # noqa: E402,F401
from .roughpath import Grid, RoughPath, lift_piecewise_linear  # noqa: E402,F401
from .rde import solve_davie, solve_picard  # noqa: E402,F401
