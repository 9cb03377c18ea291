"""Paths controlled by a reference rough path and their Banach norm."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InputError
from .roughpath import HolderReport, RoughPath, _fmt, holder_norm


def same_reference(a: RoughPath, b: RoughPath) -> bool:
    if a is b:
        return True
    return (
        a.grid.same_as(b.grid)
        and a.x.shape == b.x.shape
        and np.array_equal(a.x, b.x)
        and np.array_equal(a.area, b.area)
    )


@dataclass(frozen=True, eq=False)
class ControlledPath:
    """The pair (Z, Z') over a reference rough path.

    ``z`` has shape ``(N+1, *vshape)`` and ``zprime`` shape ``(N+1, *vshape, l)``
    where ``l`` is the reference dimension.  Values may be vectors or matrices.
    """

    reference: RoughPath
    z: np.ndarray
    zprime: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        zp = np.array(self.zprime, dtype=float)
        n1, ell = self.reference.n + 1, self.reference.dim
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != n1:
            raise InputError(f"controlled path needs {n1} values, got {z.shape[0]}")
        if zp.shape != z.shape + (ell,):
            raise InputError(f"Gubinelli derivative must have shape {z.shape + (ell,)}, got {zp.shape}")
        z.setflags(write=False)
        zp.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "zprime", zp)

    @property
    def vshape(self) -> tuple:
        return self.z.shape[1:]

    @property
    def grid(self):
        return self.reference.grid

    @property
    def start(self) -> np.ndarray:
        return self.z[0]

    def _check(self, other: "ControlledPath"):
        if not isinstance(other, ControlledPath):
            return NotImplemented
        if not same_reference(self.reference, other.reference):
            raise InputError("controlled paths over different reference rough paths")
        if self.vshape != other.vshape:
            raise InputError(f"value shapes differ: {self.vshape} vs {other.vshape}")
        return None

    def __add__(self, other):
        if (res := self._check(other)) is NotImplemented:
            return res
        return ControlledPath(self.reference, self.z + other.z, self.zprime + other.zprime)

    def __sub__(self, other):
        if (res := self._check(other)) is NotImplemented:
            return res
        return ControlledPath(self.reference, self.z - other.z, self.zprime - other.zprime)

    def __mul__(self, c: float):
        return ControlledPath(self.reference, c * self.z, c * self.zprime)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def shifted(self, c) -> "ControlledPath":
        return ControlledPath(self.reference, self.z + np.asarray(c), self.zprime)

    def remainder(self, i, j) -> np.ndarray:
        """R_ts = Z_ts - Z'_s X_ts for index arrays i <= j."""
        i, j = np.asarray(i), np.asarray(j)
        xts = self.reference.increment(i, j)
        xts = xts.reshape(xts.shape[:-1] + (1,) * len(self.vshape) + xts.shape[-1:])
        return self.z[j] - self.z[i] - np.sum(self.zprime[i] * xts, axis=-1)

    def remainder_norm(self, exponent: float | None = None) -> HolderReport:
        if exponent is None:
            exponent = 2 * self.reference.alpha
        n1 = self.reference.n + 1
        flat_z = np.ascontiguousarray(self.z.reshape(n1, -1))
        flat_zp = np.ascontiguousarray(self.zprime.reshape(n1, flat_z.shape[1], -1))
        norm, i, j = _kernels.sup_ratio_remainder(
            np.ascontiguousarray(self.grid.nodes), flat_z, flat_zp,
            np.ascontiguousarray(self.reference.x), exponent)
        return HolderReport(exponent, float(norm), (int(i), int(j)))

    def restrict(self, indices) -> "ControlledPath":
        indices = np.asarray(indices)
        return ControlledPath(self.reference.restrict(indices), self.z[indices], self.zprime[indices])

    def slice(self, start: int, stop: int) -> "ControlledPath":
        return self.restrict(np.arange(start, stop + 1))


def from_constant(c, reference: RoughPath) -> ControlledPath:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    z = np.broadcast_to(c, (reference.n + 1,) + c.shape)
    return ControlledPath(reference, z, np.zeros(z.shape + (reference.dim,)))


def from_reference(X: RoughPath) -> ControlledPath:
    """The driver itself, with Gubinelli derivative the identity."""
    eye = np.broadcast_to(np.eye(X.dim), (X.n + 1, X.dim, X.dim))
    return ControlledPath(X, X.x, eye)


def from_smooth(values, X: RoughPath) -> ControlledPath:
    """A path of bounded variation seen as controlled with zero derivative."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return ControlledPath(X, values, np.zeros(values.shape + (X.dim,)))


def compose_smooth(phi, dphi, z: ControlledPath) -> ControlledPath:
    """(phi(z_t), Dphi(z_t) Z'_t) for vector-valued controlled paths.

    ``phi`` maps ``(..., m) -> (..., n)`` and ``dphi`` maps ``(..., m) -> (..., n, m)``.
    """
    if len(z.vshape) != 1:
        raise InputError("compose_smooth expects vector-valued controlled paths")
    vals = np.asarray(phi(z.z), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    jac = np.asarray(dphi(z.z), dtype=float).reshape(vals.shape + (z.vshape[0],))
    return ControlledPath(z.reference, vals, np.einsum("knm,kml->knl", jac, z.zprime))


def controlled_norm(z: ControlledPath) -> float:
    """||Z'||_alpha + ||R||_{2 alpha} + |z_0| on the grid."""
    alpha = z.reference.alpha
    deriv = holder_norm(z.zprime, z.grid, alpha).norm
    return deriv + z.remainder_norm(2 * alpha).norm + float(np.linalg.norm(z.z[0]))


def write_csv(path, z: ControlledPath) -> None:
    """Header ``t,z1..zm,zp11..zpml`` (values flattened row-major)."""
    n1 = z.reference.n + 1
    flat = z.z.reshape(n1, -1)
    flat_p = z.zprime.reshape(n1, flat.shape[1], -1)
    m, ell = flat_p.shape[1], flat_p.shape[2]
    header = ["t"] + [f"z{a + 1}" for a in range(m)]
    header += [f"zp{a + 1}{k + 1}" for a in range(m) for k in range(ell)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(n1):
            w.writerow([_fmt(z.grid.nodes[k])] + [_fmt(v) for v in flat[k]]
                       + [_fmt(v) for v in flat_p[k].ravel()])


def read_csv(path, reference: RoughPath) -> ControlledPath:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    m = sum(1 for h in header if h.startswith("z") and not h.startswith("zp"))
    data = np.array([[float(v) for v in r] for r in body])
    if not np.array_equal(data[:, 0], reference.grid.nodes):
        raise InputError("CSV times do not match the reference grid")
    return ControlledPath(reference, data[:, 1 : 1 + m],
                          data[:, 1 + m :].reshape(len(body), m, reference.dim))
