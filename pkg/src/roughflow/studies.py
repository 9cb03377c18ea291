"""Dyadic convergence studies: metric against scale with a log2-log2 fit."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rde, sewing
from .controlled import from_reference
from .errors import InputError, ScaleRangeError
from .oneform import OneForm
from .roughpath import Grid, RoughPath, _fmt, lift_piecewise_linear, sample_gaussian_driver

UNDERFLOW = 1e-14


@dataclass
class StudyResult:
    scales: np.ndarray    # mesh-like: larger is coarser
    metrics: np.ndarray
    slope: float
    intercept: float
    r2: float

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "metric"])
            for s, m in zip(self.scales, self.metrics):
                w.writerow([_fmt(s), _fmt(m)])


def convergence_study(scales, metrics) -> StudyResult:
    """Least-squares slope of log2(metric) against log2(scale), with R^2."""
    scales = np.asarray(scales, dtype=float)
    metrics = np.asarray(metrics, dtype=float)
    if scales.shape != metrics.shape or scales.ndim != 1:
        raise InputError("scales and metrics must be matching 1-d sequences")
    if scales.size < 4:
        raise InputError("a convergence study needs at least 4 scales")
    if np.any(scales <= 0):
        raise InputError("scales must be positive")
    coarsest = int(np.argmax(scales))
    if not metrics[coarsest] >= UNDERFLOW:
        raise ScaleRangeError(
            f"metric {metrics[coarsest]:.3g} at the coarsest scale is below {UNDERFLOW:g}; nothing to fit")
    if np.any(~(metrics > 0)):
        raise ScaleRangeError("metric vanishes at a finer scale; shrink the scale range")
    lx, ly = np.log2(scales), np.log2(metrics)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return StudyResult(scales, metrics, float(slope), float(intercept), r2)


def young_germ_study(levels=(4, 5, 6, 7, 8)) -> StudyResult:
    """Sewn Young germ s (t - s) on [0, 1] against its integral 1/2."""
    hs, errs = [], []
    for k in levels:
        grid = Grid.uniform(2 ** k)
        mu = sewing.Germ.from_times(lambda s, t: s * (t - s), grid, 2.0)
        errs.append(abs(float(sewing.sew(mu, grid)[-1, 0]) - 0.5))
        hs.append(grid.mesh)
    return convergence_study(hs, errs)


def fbm_rough_path(hurst: float, alpha: float, n: int, dim: int, seed) -> RoughPath:
    grid = Grid.uniform(n)
    return lift_piecewise_linear(sample_gaussian_driver(hurst, dim, grid, seed), grid, alpha)


def davie_vs_picard_study(F: OneForm, X: RoughPath, x0, levels=(7, 8, 9, 10, 11),
                          tol: float = 1e-10) -> StudyResult:
    """Sup distance between Davie on coarsened grids and Picard on the full grid of X."""
    ref = rde.solve_picard(F, from_reference(X), x0, tol=tol).values
    hs, errs = [], []
    for k in levels:
        factor = X.n // 2 ** k
        if factor < 1 or X.n % 2 ** k:
            raise InputError(f"level {k} does not divide the reference grid of {X.n} steps")
        coarse = X.coarsen(factor)
        dav = rde.solve_davie(F, coarse, x0).values
        errs.append(float(np.max(np.linalg.norm(dav - ref[::factor], axis=1))))
        hs.append(coarse.grid.mesh)
    return convergence_study(hs, errs)


__all__ = ["StudyResult", "convergence_study", "young_germ_study", "fbm_rough_path",
           "davie_vs_picard_study"]
