"""Grids, two-level rough paths, lifts, Gaussian drivers and grid Hölder norms.

Conventions
-----------
Level-two values follow ``area[i, j] = int X^i_{rs} dX^j_r`` so that Chen's
relation reads ``A_ts = A_tu + A_us + outer(X_us, X_tu)``.  Only the areas of
consecutive grid intervals are stored; any other pair is composed on demand.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InputError


@dataclass(frozen=True, eq=False)
class Grid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InputError("a grid needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise InputError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n: int, horizon: float = 1.0) -> "Grid":
        if n < 1:
            raise InputError("uniform grid needs n >= 1 intervals")
        return cls(np.linspace(0.0, horizon, n + 1))

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.nodes.size - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        h = self.steps
        return bool(np.all(np.abs(h - h[0]) <= rtol * h[0]))

    def sub(self, indices) -> "Grid":
        return Grid(self.nodes[np.asarray(indices)])

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)
        )


@dataclass(frozen=True)
class HolderReport:
    exponent: float
    norm: float
    argmax_pair: tuple[int, int]


@dataclass(frozen=True, eq=False)
class RoughPath:
    """Weak-geometric two-level rough path sampled on a grid.

    ``x`` has shape ``(N+1, l)``, ``area`` has shape ``(N, l, l)`` and holds the
    level-two value of each consecutive interval ``[t_i, t_{i+1}]``.
    """

    grid: Grid
    x: np.ndarray
    area: np.ndarray
    alpha: float = 0.5
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        area = np.array(self.area, dtype=float)
        n = self.grid.n
        if x.shape[0] != n + 1:
            raise InputError(f"expected {n + 1} path samples, got {x.shape[0]}")
        ell = x.shape[1]
        if area.shape != (n, ell, ell):
            raise InputError(f"area must have shape {(n, ell, ell)}, got {area.shape}")
        if not (1 / 3 < self.alpha <= 0.5):
            raise InputError("alpha must lie in (1/3, 1/2]")
        x.setflags(write=False)
        area.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "area", area)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.x, axis=0)

    def _cumulative(self) -> np.ndarray:
        # C_k = A_{t_k, t_0}, built by Chen's relation left to right
        if "cum" not in self._cache:
            dx = self.increments
            x0 = self.x - self.x[0]
            cross = np.einsum("ka,kb->kab", x0[:-1], dx)
            c = np.zeros((self.n + 1, self.dim, self.dim))
            c[1:] = np.cumsum(self.area + cross, axis=0)
            self._cache["cum"] = c
        return self._cache["cum"]

    def area_between(self, i, j) -> np.ndarray:
        """Level-two value over [t_i, t_j] (vectorised over index arrays)."""
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any(i > j):
            raise InputError("area_between needs i <= j")
        c = self._cumulative()
        x0 = self.x - self.x[0]
        xts = self.x[j] - self.x[i]
        return c[j] - c[i] - np.einsum("...a,...b->...ab", x0[i], xts)

    def increment(self, i, j) -> np.ndarray:
        return self.x[np.asarray(j)] - self.x[np.asarray(i)]

    def pair_areas(self) -> np.ndarray:
        """Dense table ``(N+1, N+1, l, l)``; only entries with i <= j are meaningful."""
        if "pairs" in self._cache:
            return self._cache["pairs"]
        idx = np.arange(self.n + 1)
        i, j = np.meshgrid(idx, idx, indexing="ij")
        table = np.ascontiguousarray(self.area_between(np.minimum(i, j), np.maximum(i, j)))
        table.setflags(write=False)
        if self.n <= 2048:
            self._cache["pairs"] = table
        return table

    def restrict(self, indices) -> "RoughPath":
        """The same rough path read on a sub-grid (areas composed by Chen)."""
        indices = np.asarray(indices)
        if indices[0] < 0 or indices[-1] > self.n or np.any(np.diff(indices) <= 0):
            raise InputError("restriction indices must be increasing and within range")
        area = self.area_between(indices[:-1], indices[1:])
        return RoughPath(self.grid.sub(indices), self.x[indices], area, self.alpha)

    def coarsen(self, factor: int) -> "RoughPath":
        if self.n % factor:
            raise InputError("coarsening factor must divide the number of intervals")
        return self.restrict(np.arange(0, self.n + 1, factor))

    def slice(self, start: int, stop: int) -> "RoughPath":
        return self.restrict(np.arange(start, stop + 1))


def _as_samples(samples, grid: Grid) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] < 1:
        raise InputError("samples must be a (nodes, dim) array")
    if samples.shape[0] != grid.n + 1:
        raise InputError(
            f"{samples.shape[0]} samples do not match a grid with {grid.n + 1} nodes"
        )
    return samples


def lift_piecewise_linear(samples, grid: Grid, alpha: float = 0.5) -> RoughPath:
    """Canonical lift of the linear interpolation of ``samples``."""
    samples = _as_samples(samples, grid)
    dx = np.diff(samples, axis=0)
    area = 0.5 * np.einsum("ka,kb->kab", dx, dx)
    return RoughPath(grid, samples, area, alpha)


def joint_lift(x_samples, lam_samples, grid: Grid, alpha: float = 0.5) -> RoughPath:
    """Lift of the concatenated path (x, lambda) in R^{l + l'}."""
    x_samples = _as_samples(x_samples, grid)
    try:
        lam_samples = _as_samples(lam_samples, grid)
    except InputError as exc:
        raise InputError(f"second factor does not live on the same grid: {exc}") from None
    return lift_piecewise_linear(np.hstack([x_samples, lam_samples]), grid, alpha)


def joint_extend(X: RoughPath, lam_samples) -> RoughPath:
    """Rough path over (X, lambda) for a path lambda of bounded variation.

    The cross integrals between X and lambda are Young integrals and are taken
    with both factors linear on each step; for a piecewise-linear X this is
    exactly :func:`joint_lift`.
    """
    try:
        lam = _as_samples(lam_samples, X.grid)
    except InputError as exc:
        raise InputError(f"second factor does not live on the same grid: {exc}") from None
    dx, dl = X.increments, np.diff(lam, axis=0)
    ell, m = X.dim, lam.shape[1]
    area = np.zeros((X.n, ell + m, ell + m))
    area[:, :ell, :ell] = X.area
    area[:, :ell, ell:] = 0.5 * np.einsum("ka,kb->kab", dx, dl)
    area[:, ell:, :ell] = 0.5 * np.einsum("ka,kb->kab", dl, dx)
    area[:, ell:, ell:] = 0.5 * np.einsum("ka,kb->kab", dl, dl)
    return RoughPath(X.grid, np.hstack([X.x, lam]), area, X.alpha)


def chen_defect(X: RoughPath, table: np.ndarray | None = None) -> float:
    """Largest violation of Chen's relation over all node triples.

    With ``table`` (a dense ``(N+1, N+1, l, l)`` array of pair areas) the audit
    checks that table against the increments of ``X``; otherwise the composed
    accessor of ``X`` is checked.
    """
    if table is None:
        table = X.pair_areas()
    table = np.ascontiguousarray(table, dtype=float)
    return float(_kernels.chen_defect_table(np.ascontiguousarray(X.x), table))


def chen_defect_sampled(X: RoughPath, n_triples: int = 100_000, seed=0) -> float:
    """Chen audit over random node triples s < u < t (for grids too large for the full audit)."""
    rng = np.random.default_rng(seed)
    trip = np.sort(rng.integers(0, X.n + 1, size=(n_triples, 3)), axis=1)
    s, u, t = trip[:, 0], trip[:, 1], trip[:, 2]
    keep = (s < u) & (u < t)
    s, u, t = s[keep], u[keep], t[keep]
    d = (X.area_between(s, t) - X.area_between(s, u) - X.area_between(u, t)
         - np.einsum("ka,kb->kab", X.x[u] - X.x[s], X.x[t] - X.x[u]))
    return float(np.max(np.sqrt(np.sum(d ** 2, axis=(1, 2))), initial=0.0))


def geometric_defect_sampled(X: RoughPath, n_pairs: int = 100_000, seed=0) -> float:
    rng = np.random.default_rng(seed)
    pair = np.sort(rng.integers(0, X.n + 1, size=(n_pairs, 2)), axis=1)
    i, j = pair[:, 0], pair[:, 1]
    a = X.area_between(i, j)
    xts = X.x[j] - X.x[i]
    diff = 0.5 * (a + np.swapaxes(a, -1, -2)) - 0.5 * np.einsum("ka,kb->kab", xts, xts)
    return float(np.max(np.sqrt(np.sum(diff ** 2, axis=(1, 2)))))


def geometric_defect(X: RoughPath) -> float:
    """max over pairs of |Sym(A_ts) - X_ts (x) X_ts / 2|."""
    return float(_kernels.geometric_defect_table(np.ascontiguousarray(X.x), X.pair_areas()))


def holder_norm(values, grid: Grid, exponent: float, two_index: bool = False) -> HolderReport:
    """Grid proxy of the Hölder norm: sup over node pairs of |v_ts| / |t-s|^exponent.

    One-index data ``(N+1, ...)`` are differenced first; two-index data are a
    dense table ``(N+1, N+1, ...)`` read on its upper triangle.
    """
    if not (0 < exponent <= 1):
        raise InputError("exponent must lie in (0, 1]")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InputError("empty grid data")
    t = np.ascontiguousarray(grid.nodes)
    if two_index:
        if values.shape[:2] != (t.size, t.size):
            raise InputError("two-index data must have shape (N+1, N+1, ...)")
        flat = np.ascontiguousarray(values.reshape(t.size, t.size, -1))
        norm, i, j = _kernels.sup_ratio_table(t, flat, exponent)
    else:
        if values.shape[0] != t.size:
            raise InputError("one-index data must have one row per grid node")
        flat = np.ascontiguousarray(values.reshape(t.size, -1))
        norm, i, j = _kernels.sup_ratio_increments(t, flat, exponent)
    return HolderReport(exponent, float(norm), (int(i), int(j)))


@functools.lru_cache(maxsize=16)
def _fbm_factor(hurst: float, nodes: tuple) -> np.ndarray:
    t = np.asarray(nodes)[1:]
    if hurst == 1.0:
        return t[:, None]
    s, u = np.meshgrid(t, t, indexing="ij")
    h2 = 2.0 * hurst
    cov = 0.5 * (s**h2 + u**h2 - np.abs(s - u) ** h2)
    return np.linalg.cholesky(cov)


def fbm_factor(hurst: float, grid: Grid) -> np.ndarray:
    """Cholesky factor of the fBM covariance at the nonzero grid nodes."""
    if not (1 / 3 < hurst <= 1):
        raise InputError("hurst outside (1/3, 1]")
    if not grid.is_uniform():
        raise InputError("fBM sampling requires a uniform grid")
    return _fbm_factor(float(hurst), tuple(grid.nodes))


def sample_gaussian_driver(hurst: float, dim: int, grid: Grid, seed) -> np.ndarray:
    """Independent fBM coordinates at the grid nodes, shape ``(N+1, dim)``.

    ``seed`` is anything ``numpy.random.default_rng`` accepts; the output is a
    pure function of it.  H = 1/2 gives Brownian motion, H = 1 the line t*Z.
    """
    if dim < 1:
        raise InputError("dim must be >= 1")
    factor = fbm_factor(hurst, grid)
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((factor.shape[1], dim))
    out = np.zeros((grid.n + 1, dim))
    out[1:] = factor @ normals
    return out


def rotate(M, X: RoughPath) -> RoughPath:
    """Action of a linear map on a rough path: (M X, M A M^T)."""
    M = np.asarray(M, dtype=float)
    if M.shape != (X.dim, X.dim):
        raise InputError(f"matrix of shape {M.shape} cannot act on a {X.dim}-dim rough path")
    area = np.einsum("ab,kbc,dc->kad", M, X.area, M)
    return RoughPath(X.grid, X.x @ M.T, area, X.alpha)


def project(X: RoughPath, coords) -> RoughPath:
    coords = np.atleast_1d(np.asarray(coords, dtype=int))
    if coords.size == 0:
        raise InputError("projection needs at least one coordinate")
    if coords.min() < 0 or coords.max() >= X.dim:
        raise InputError(f"coordinates {coords.tolist()} out of range for dim {X.dim}")
    area = X.area[:, coords][:, :, coords]
    return RoughPath(X.grid, X.x[:, coords], area, X.alpha)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path, X: RoughPath | None = None, *, grid: Grid | None = None,
              samples=None) -> None:
    """Write a rough path (``t,x1..xl,a11..all``) or plain samples (``t,x1..xl``).

    The area of each interval sits on the row of its right endpoint; the
    first row leaves the area columns empty.
    """
    if X is not None:
        grid, samples = X.grid, X.x
    samples = _as_samples(samples, grid)
    ell = samples.shape[1]
    header = ["t"] + [f"x{a + 1}" for a in range(ell)]
    if X is not None:
        header += [f"a{a + 1}{b + 1}" for a in range(ell) for b in range(ell)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(grid.n + 1):
            row = [_fmt(grid.nodes[k])] + [_fmt(v) for v in samples[k]]
            if X is not None:
                row += [""] * ell * ell if k == 0 else [_fmt(v) for v in X.area[k - 1].ravel()]
            w.writerow(row)


def read_csv(path, alpha: float = 0.5):
    """Inverse of :func:`write_csv`: a RoughPath if area columns exist, else (grid, samples)."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise InputError("CSV header must start with 't'")
    ell = sum(1 for h in header if h.startswith("x"))
    grid = Grid(np.array([float(r[0]) for r in body]))
    samples = np.array([[float(v) for v in r[1 : 1 + ell]] for r in body])
    if len(header) == 1 + ell:
        return grid, samples
    if len(header) != 1 + ell + ell * ell:
        raise InputError("CSV area columns do not match the path dimension")
    area = np.array([[float(v) for v in r[1 + ell :]] for r in body[1:]]).reshape(-1, ell, ell)
    return RoughPath(grid, samples, area, alpha)
