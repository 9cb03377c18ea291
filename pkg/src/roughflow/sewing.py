"""Sewing of almost-additive germs and the two rough integrals built on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controlled import ControlledPath, from_reference, same_reference
from .errors import InputError
from .oneform import OneForm
from .roughpath import Grid, RoughPath


@dataclass(frozen=True)
class Germ:
    """Two-index map evaluated on node index arrays ``(s_idx, t_idx)``."""

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    zeta: float

    def __call__(self, i, j):
        return np.asarray(self.evaluate(np.asarray(i), np.asarray(j)), dtype=float)

    @classmethod
    def from_times(cls, fn, grid: Grid, zeta: float) -> "Germ":
        """Germ given as a function of the times (s, t) rather than node indices."""
        nodes = grid.nodes
        return cls(lambda i, j: fn(nodes[i], nodes[j]), zeta)


def sew(mu: Germ, grid: Grid) -> np.ndarray:
    """Path started at 0 whose increments telescope the consecutive germs."""
    if mu.zeta <= 1:
        raise InputError(f"sewing needs a defect exponent zeta > 1, got {mu.zeta}")
    i = np.arange(grid.n)
    inc = mu(i, i + 1)
    if inc.ndim == 1:
        inc = inc[:, None]
    out = np.zeros((grid.n + 1,) + inc.shape[1:])
    out[1:] = np.cumsum(inc, axis=0)
    return out


def defect_profile(mu: Germ, grid: Grid, min_block: int = 2):
    """Largest |mu_ts - mu_tu - mu_us| at each dyadic block size (u the midpoint).

    Returns ``(spans, defects)`` with spans the largest |t - s| per block size.
    """
    spans, defects = [], []
    b = min_block
    while b <= grid.n:
        s = np.arange(0, grid.n - b + 1)
        u, t = s + b // 2, s + b
        d = mu(s, t) - mu(u, t) - mu(s, u)
        d = d.reshape(s.size, -1)
        defects.append(float(np.max(np.linalg.norm(d, axis=1))))
        spans.append(float(np.max(grid.nodes[t] - grid.nodes[s])))
        b *= 2
    return np.array(spans), np.array(defects)


def estimate_zeta(mu: Germ, grid: Grid, min_block: int = 2) -> float:
    """Log-log regression slope of the germ defect against the span."""
    spans, defects = defect_profile(mu, grid, min_block)
    keep = defects > 0
    if keep.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(spans[keep]), np.log(defects[keep]), 1)[0])


def integral_germ(a: ControlledPath, y: ControlledPath) -> Germ:
    """Germ a_s y_ts + a'_s (y'_s) XX_ts of the integral of a against y.

    ``a`` takes values in L(R^u, R^m) (vshape ``(m, u)``); ``y`` in R^u.  The
    first slot of the area pairs with a's derivative slot, the second with
    y's driver slot.
    """
    X = a.reference

    def evaluate(i, j):
        yts = y.z[j] - y.z[i]
        area = X.area_between(i, j)
        first = np.einsum("...mb,...b->...m", a.z[i], yts)
        second = np.einsum("...mbk,...bj,...kj->...m", a.zprime[i], y.zprime[i], area)
        return first + second

    return Germ(evaluate, 3 * X.alpha)


def _check_pair(a: ControlledPath, y: ControlledPath):
    if not same_reference(a.reference, y.reference):
        raise InputError("integrand and integrator are controlled by different rough paths")
    if len(a.vshape) != 2 or len(y.vshape) != 1 or a.vshape[1] != y.vshape[0]:
        raise InputError(f"cannot integrate values of shape {a.vshape} against {y.vshape}")


def integrate(a: ControlledPath, y: ControlledPath) -> ControlledPath:
    """Rough integral of a controlled integrand against a controlled integrator."""
    _check_pair(a, y)
    X = a.reference
    b = sew(integral_germ(a, y), X.grid)
    return ControlledPath(X, b, np.einsum("kmb,kbj->kmj", a.z, y.zprime))


def rough_integral_controlled(a: ControlledPath, X: RoughPath) -> ControlledPath:
    """int a dX for a controlled L(R^l, R^m)-valued integrand; b' = a."""
    if not same_reference(a.reference, X):
        raise InputError("integrand is not controlled by the given rough path")
    return integrate(a, from_reference(a.reference))


def oneform_integrand(F: OneForm, z: ControlledPath) -> ControlledPath:
    """The controlled path (F(z), DF(z) Z')."""
    if z.vshape != (F.dim,):
        raise InputError(f"{F.name} acts on R^{F.dim}, path values have shape {z.vshape}")
    vals = F(z.z)
    deriv = np.einsum("kabc,kcp->kabp", F.derivative(z.z, 1), z.zprime)
    return ControlledPath(z.reference, vals, deriv)


def rough_integral_oneform(F: OneForm, z: ControlledPath, y: ControlledPath,
                           X: RoughPath | None = None) -> ControlledPath:
    """int F(z) dy with germ F(z_s) y_ts + DF(z_s)(Z'_s (x) y'_s) XX_ts."""
    if X is not None and not same_reference(z.reference, X):
        raise InputError("z is not controlled by the given rough path")
    if not same_reference(z.reference, y.reference):
        raise InputError("z and y are controlled by different rough paths")
    if y.vshape != (F.ncols,):
        raise InputError(f"{F.name} expects a driver in R^{F.ncols}, got {y.vshape}")
    return integrate(oneform_integrand(F, z), y)
