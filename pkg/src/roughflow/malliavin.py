"""Malliavin covariance from the derivative flow, and the rotation
reversibility identity checked by Monte Carlo."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import rde
from .errors import DivergenceError, InputError, NumericalError
from .oneform import OneForm
from .roughpath import Grid, RoughPath, _fmt, fbm_factor, rotate

SAMPLE_CHUNK = 256
MAX_FAILED = 0.01


@dataclass
class CovarianceMatrix:
    gamma: np.ndarray
    grid: Grid

    @property
    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.gamma - self.gamma.T)))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.gamma + self.gamma.T))))


def malliavin_covariance(F: OneForm, X: RoughPath, x0) -> CovarianceMatrix:
    """Gamma = sum_i int_0^T (U_r^{-1} V_i(x_r)) (U_r^{-1} V_i(x_r))^T dr, V_i the columns of F.

    U^{-1} is stepped alongside U by inverting each step map, never by
    inverting U at the nodes.
    """
    U, V, sol = rde.derivative_flow(F, X, x0)
    det = np.linalg.det(U.z)
    if not np.all(np.isfinite(det)) or np.min(np.abs(det)) < 1e-300:
        raise NumericalError("derivative flow is not invertible")
    w = np.einsum("kab,kbi->kai", V.z, F(sol.values))
    integrand = np.einsum("kai,kbi->kab", w, w)
    dt = X.grid.steps[:, None, None]
    gamma = np.sum(0.5 * dt * (integrand[1:] + integrand[:-1]), axis=0)
    return CovarianceMatrix(gamma, X.grid)


def givens(angle: float, dim: int) -> np.ndarray:
    """Rotation by ``angle`` in the plane of the first two coordinates."""
    if dim < 2:
        raise InputError("rotations need a driver of dimension at least 2")
    M = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    M[0, 0], M[0, 1], M[1, 0], M[1, 1] = c, -s, s, c
    return M


class BrownianAngle:
    """Brownian motion on the circle started from a uniform angle.

    Values are drawn lazily at increasing times, so a sample is a pure
    function of its seed and the sequence of requested times.
    """

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self._times = [0.0]
        self._values = [float(self._rng.uniform(0.0, 2 * np.pi))]

    def __call__(self, s: float) -> float:
        if s < 0:
            raise InputError("angle process is indexed by s >= 0")
        if s < self._times[-1]:
            i = self._times.index(s) if s in self._times else None
            if i is None:
                raise InputError("angle process must be queried at increasing times")
            return self._values[i]
        if s > self._times[-1]:
            step = s - self._times[-1]
            self._values.append(self._values[-1] + math.sqrt(step) * float(self._rng.standard_normal()))
            self._times.append(s)
        return self._values[-1]


def rotation_path(X: RoughPath, w: Callable[[float], float] | float, s: float = 0.0) -> RoughPath:
    """M^{W_s} X with M the rotation in the first coordinate plane."""
    if X.dim < 2:
        raise InputError("rotations need a driver of dimension at least 2")
    angle = w(s) if callable(w) else float(w)
    return rotate(givens(angle, X.dim), X)


@dataclass
class MCReport:
    lhs_estimate: float
    rhs_estimate: float
    lhs_se: float
    rhs_se: float
    n_samples: int
    seed: int
    s_parameter: float
    swapped_rhs_estimate: float = 0.0
    swapped_rhs_se: float = 0.0
    n_failed: int = 0
    lhs_terms: np.ndarray = field(default=None, repr=False)
    rhs_terms: np.ndarray = field(default=None, repr=False)
    sample_ids: np.ndarray = field(default=None, repr=False)

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    def consistent(self, k: float = 3.0) -> bool:
        return abs(self.lhs_estimate - self.rhs_estimate) <= k * self.combined_se

    def exchangeable(self, k: float = 3.0) -> bool:
        se = math.hypot(self.rhs_se, self.swapped_rhs_se)
        return abs(self.rhs_estimate - self.swapped_rhs_estimate) <= k * se

    def summary(self) -> dict:
        return {
            "lhs_estimate": self.lhs_estimate, "rhs_estimate": self.rhs_estimate,
            "lhs_se": self.lhs_se, "rhs_se": self.rhs_se,
            "swapped_rhs_estimate": self.swapped_rhs_estimate,
            "swapped_rhs_se": self.swapped_rhs_se,
            "n_samples": self.n_samples, "n_failed": self.n_failed,
            "seed": self.seed, "s_parameter": self.s_parameter,
            "verdict": "pass" if self.consistent() else "fail",
        }


def _mean_se(terms: np.ndarray):
    n = terms.size
    mean = math.fsum(terms) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((terms - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ROUGHFLOW_THREADS", "1")))
    except ValueError:
        raise InputError("ROUGHFLOW_THREADS must be an integer") from None


def _chunk(F, factor, ell, s, seed, x0, ids):
    """Endpoints of both solves for the sample ids (padded to a fixed chunk)."""
    n = factor.shape[0]
    dx0 = np.zeros((SAMPLE_CHUNK, n, ell))
    dxs = np.zeros((SAMPLE_CHUNK, n, ell))
    for row, idx in enumerate(ids):
        normals = np.random.default_rng([seed, idx, 0]).standard_normal((factor.shape[1], ell))
        dx = factor @ normals
        w = BrownianAngle([seed, idx, 1])
        dx0[row] = dx @ givens(w(0.0), ell).T
        dxs[row] = dx @ givens(w(s), ell).T
    # canonical piecewise-linear areas; rotation commutes with the lift
    a0 = 0.5 * np.einsum("ska,skb->skab", dx0, dx0)
    a_s = 0.5 * np.einsum("ska,skb->skab", dxs, dxs)
    e0, f0 = rde.davie_endpoints(F, dx0, a0, x0)
    es, fs = rde.davie_endpoints(F, dxs, a_s, x0)
    m = len(ids)
    return e0[:m], es[:m], (f0 | fs)[:m]


def ibp_reversibility_mc(F: OneForm, f: Callable, g: Callable, s: float, n_samples: int,
                         hurst: float = 0.5, grid_n: int = 256, seed: int = 0,
                         x0=None) -> MCReport:
    """Paired estimates of both sides of

        E[(f(x^s) - f(x^0)) (g(x^s) - g(x^0))] = -2 E[f(x^0) (g(x^s) - g(x^0))]

    where x^0, x^s are the time-1 solutions driven by M^{W_0} X and M^{W_s} X
    for one fBM sample X and one circle Brownian motion W per sample.
    ``f`` and ``g`` act row-wise on arrays of shape (n, d).
    """
    if n_samples < 100:
        raise InputError("n_samples must be at least 100")
    if s < 0:
        raise InputError("s must be non-negative")
    ell = F.ncols
    if ell < 2:
        raise InputError("the reversibility check needs a driver of dimension at least 2")
    x0 = np.zeros(F.dim) if x0 is None else np.asarray(x0, dtype=float)
    factor = fbm_factor(hurst, Grid.uniform(grid_n))
    factor = np.vstack([factor[:1], np.diff(factor, axis=0)])   # increments operator
    chunks = [list(range(k, min(k + SAMPLE_CHUNK, n_samples)))
              for k in range(0, n_samples, SAMPLE_CHUNK)]

    def run(ids):
        return _chunk(F, factor, ell, s, seed, x0, ids)

    workers = _threads()
    if workers == 1:
        parts = [run(ids) for ids in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    e0 = np.concatenate([p[0] for p in parts])
    es = np.concatenate([p[1] for p in parts])
    failed = np.concatenate([p[2] for p in parts])
    n_failed = int(failed.sum())
    if n_failed > MAX_FAILED * n_samples:
        raise DivergenceError(f"{n_failed} of {n_samples} sample solves diverged")
    ok = ~failed
    f0, fs = np.asarray(f(e0[ok]), dtype=float), np.asarray(f(es[ok]), dtype=float)
    g0, gs = np.asarray(g(e0[ok]), dtype=float), np.asarray(g(es[ok]), dtype=float)
    lhs = (fs - f0) * (gs - g0)
    rhs = -2.0 * f0 * (gs - g0)
    rhs_swapped = -2.0 * fs * (g0 - gs)
    lm, lse = _mean_se(lhs)
    rm, rse = _mean_se(rhs)
    sm, sse = _mean_se(rhs_swapped)
    return MCReport(lm, rm, lse, rse, int(ok.sum()), int(seed), float(s), sm, sse, n_failed, lhs, rhs,
                    np.flatnonzero(ok))


def write_mc_csv(path, report: MCReport) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "lhs_term", "rhs_term"])
        for i, a, b in zip(report.sample_ids, report.lhs_terms, report.rhs_terms):
            w.writerow([int(i), _fmt(a), _fmt(b)])


def write_mc_summary(path, report: MCReport) -> None:
    Path(path).write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")


__all__ = [
    "CovarianceMatrix", "malliavin_covariance", "givens", "BrownianAngle", "rotation_path",
    "MCReport", "ibp_reversibility_mc", "write_mc_csv", "write_mc_summary",
]
