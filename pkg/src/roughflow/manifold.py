"""Geometry of the unit sphere S^n in R^{n+1} for controlled paths.

A manifold path is a controlled path with values on the sphere and tangent
Gubinelli derivative.  Tangent frames are moved by the projector connection
dT = DP(y)[dy] T, which is the Levi-Civita transport on tangent columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from . import rde
from .controlled import ControlledPath, same_reference
from .errors import InputError, NumericalError, StepSizeError
from .oneform import OneForm
from .roughpath import Grid, RoughPath, lift_piecewise_linear, sample_gaussian_driver
from .sewing import integrate

TOL_MANIFOLD = 1e-6
COND_MAX = 1e8
RETRACT_MAX = 1e-3


def _smoothstep9(u):
    # C^4 ramp from 0 to 1 on [0, 1]
    u = jnp.minimum(jnp.maximum(u, 0.0), 1.0)
    return u ** 5 * (126 - 420 * u + 540 * u ** 2 - 315 * u ** 3 + 70 * u ** 4)


class ProjectorField(OneForm):
    """A field of d x d matrices P(x), seen as a one-form with d columns.

    ``band`` is the radius interval outside which P vanishes; the field is
    undamped on the inner half of the band around radius 1.
    """

    def __init__(self, fn, dim: int, band=(0.5, 1.5), name: str = "projector"):
        super().__init__(fn, dim, dim, name)
        self.band = tuple(float(b) for b in band)

    def eval(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        if np.any(np.linalg.norm(x.reshape(-1, self.dim), axis=1) == 0):
            raise InputError(f"{self.name} is undefined at the origin")
        return super().eval(x, order)

    __call__ = eval


def _cutoff(rho, band):
    lo, hi = band
    inner_lo, inner_hi = lo + (1 - lo) / 2, hi - (hi - 1) / 2
    r = jnp.sqrt(jnp.maximum(rho, 1e-12))
    up = _smoothstep9((r - lo) / (inner_lo - lo))
    down = 1 - _smoothstep9((r - inner_hi) / (hi - inner_hi))
    return up * down


def sphere_projector_field(dim: int = 3, band=(0.5, 1.5)) -> ProjectorField:
    """x -> S(|x|) (I - x x^T / |x|^2) with a C^4 radial cutoff S."""
    eye = jnp.eye(dim)

    def fn(x):
        rho = x @ x
        safe = jnp.where(rho > 1e-12, rho, 1.0)
        return _cutoff(rho, band) * (eye - jnp.outer(x, x) / safe)

    return ProjectorField(fn, dim, band, "sphere-projector")


def sphere_projector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return _default_field(x.shape[-1])(x)


_FIELDS: dict = {}


def _default_field(dim: int) -> ProjectorField:
    if dim not in _FIELDS:
        _FIELDS[dim] = sphere_projector_field(dim)
    return _FIELDS[dim]


def tangent_direction(P: ProjectorField, K) -> OneForm:
    """Q(x) = P(x) K: a direction whose range stays tangent."""
    K = jnp.asarray(np.asarray(K, dtype=float))
    f = P.fn
    return OneForm(lambda x: f(x) @ K, P.dim, P.dim, "P.K")


# ------------------------------------------------------------ manifold paths

def check_manifold_path(y: ControlledPath, tol: float = TOL_MANIFOLD) -> None:
    if len(y.vshape) != 1:
        raise InputError("a manifold path has vector values")
    radial = np.abs(np.linalg.norm(y.z, axis=1) - 1.0)
    if np.max(radial) > tol:
        raise InputError(f"path leaves the unit sphere by {np.max(radial):.3g}")
    normal = np.einsum("ka,kaj->kj", y.z, y.zprime)
    if np.max(np.abs(normal)) > max(tol, 1e-6):
        raise InputError("Gubinelli derivative is not tangent to the sphere")


def manifold_path(X: RoughPath) -> ControlledPath:
    """The rough path itself as a sphere path, with derivative P(y) (tangent)."""
    y = X.x
    check = np.abs(np.linalg.norm(y, axis=1) - 1.0)
    if np.max(check) > TOL_MANIFOLD:
        raise InputError("rough path values are not on the unit sphere")
    return ControlledPath(X, y, sphere_projector(y))


def sphere_curve(points, grid: Grid, alpha: float = 0.5) -> ControlledPath:
    """Sphere path from samples on the sphere, lifted piecewise linearly."""
    return manifold_path(lift_piecewise_linear(points, grid, alpha))


def sphere_brownian_path(grid: Grid, seed, start=(0.0, 0.0, 1.0), hurst: float = 0.5,
                         alpha: float | None = None) -> ControlledPath:
    """Sample of dy = P(y) dB on the sphere (Davie steps, then renormalised)."""
    start = np.asarray(start, dtype=float)
    d = start.size
    if alpha is None:
        alpha = min(0.5, hurst) - 0.01 if hurst <= 0.5 else 0.5
    B = lift_piecewise_linear(sample_gaussian_driver(hurst, d, grid, seed), grid, alpha)
    P = _default_field(d)
    y = rde.solve_davie(P, B, start / np.linalg.norm(start)).values
    y = y / np.linalg.norm(y, axis=1, keepdims=True)
    return ControlledPath(B, y, np.einsum("kab,kbj->kaj", P(y), np.eye(d)[None]))


def tangent_frame(y0) -> np.ndarray:
    """Orthogonal matrix whose first n columns span T_{y0}S^n and last column is y0."""
    y0 = np.asarray(y0, dtype=float)
    d = y0.size
    q, _ = np.linalg.qr(np.column_stack([y0, np.eye(d)]))
    q = q[:, :d] * np.sign(q[:, 0] @ y0)
    return np.column_stack([q[:, 1:], q[:, 0]])


# ------------------------------------------------------------- transport

def _transport(P: ProjectorField, y: ControlledPath, T0, orthonormalize: bool = True):
    X = y.reference
    A = np.transpose(P.derivative(y.z, 1), (0, 3, 1, 2))            # A_b = DP[:, :, b]
    DA = np.transpose(P.derivative(y.z, 2), (0, 3, 4, 1, 2))        # along state direction e
    retract = None
    if orthonormalize:
        proj = P(y.z)

        def retract(k, T):
            # nearest orthonormal tangent frame; the normal column is left alone
            u, _, vt = np.linalg.svd(proj[k] @ T[:, :-1], full_matrices=False)
            out = T.copy()
            out[:, :-1] = u @ vt
            return out

    T, _, ay = rde.linear_flow(A, DA, y.zprime, y.zprime, np.diff(y.z, axis=0), X.area, T0, retract)
    Tp = np.einsum("kjmr,krn->kmnj", ay, T)
    return ControlledPath(X, T, Tp)


def parallel_transport(y: ControlledPath, T0=None, P: ProjectorField | None = None,
                       check: bool = True, orthonormalize: bool = True) -> ControlledPath:
    """Frame T_s with dT = DP(y)[dy] T, T_0 = T0 (defaults to :func:`tangent_frame`).

    With ``orthonormalize`` the tangent block is retracted to the nearest
    orthonormal tangent frame after each step, which removes the drift of the
    two-term step without changing its order.
    """
    d = y.vshape[0]
    P = P or _default_field(d)
    if check:
        check_manifold_path(y)
    T0 = tangent_frame(y.z[0]) if T0 is None else np.asarray(T0, dtype=float)
    if T0.shape != (d, d):
        raise InputError(f"T0 must be {d} x {d}")
    if np.max(np.abs(T0.T @ T0 - np.eye(d))) > 1e-8:
        raise InputError("T0 must be orthogonal")
    if np.max(np.abs(y.z[0] @ T0[:, : d - 1])) > 1e-8:
        raise InputError("the first n columns of T0 must be tangent at y_0")
    return _transport(P, y, T0, orthonormalize)


def frame_defect(T: ControlledPath) -> float:
    """max_s |E_s^T E_s - I| for the tangent block E of the frame."""
    E = T.z[:, :, :-1]
    n = E.shape[2]
    return float(np.max(np.abs(np.einsum("kai,kaj->kij", E, E) - np.eye(n))))


def holonomy_angle(colatitude: float, n: int = 1024) -> float:
    """Rotation angle of a tangent vector transported once around a latitude circle."""
    grid = Grid.uniform(n)
    s = 2 * np.pi * grid.nodes
    th = colatitude
    pts = np.column_stack([np.sin(th) * np.cos(s), np.sin(th) * np.sin(s),
                           np.full_like(s, np.cos(th))])
    T = parallel_transport(sphere_curve(pts, grid))
    e1, e2 = T.z[0][:, 0], T.z[0][:, 1]
    v = T.z[-1][:, 0]
    return float(np.arctan2(v @ e2, v @ e1))


# ------------------------------------------------- (anti-)development

def _frame_with_normal(y: ControlledPath, T: ControlledPath):
    """[E_s | y_s] and its Gubinelli derivative."""
    F = np.concatenate([T.z[:, :, :-1], y.z[:, :, None]], axis=2)
    Fp = np.concatenate([T.zprime[:, :, :-1], y.zprime[:, :, None]], axis=2)
    return F, Fp


def anti_development(y: ControlledPath, T: ControlledPath | None = None,
                     P: ProjectorField | None = None) -> ControlledPath:
    """z with dz = T^{-1} P(y) dy in the tangent coordinates at y_0 (values in R^n).

    The normal column of the frame is replaced by y_s itself, which does not
    change T^{-1} on tangent vectors.
    """
    d = y.vshape[0]
    P = P or _default_field(d)
    T = parallel_transport(y, P=P) if T is None else T
    Fr, Frp = _frame_with_normal(y, T)
    cond = np.linalg.cond(Fr)
    if not np.all(np.isfinite(cond)) or np.max(cond) > COND_MAX:
        raise NumericalError(f"transported frame is near-singular (condition {np.max(cond):.3g})")
    inv = np.linalg.inv(Fr)
    Pv = P(y.z)
    dP = np.einsum("kabc,kcj->kabj", P.derivative(y.z, 1), y.zprime)
    a = inv @ Pv
    ap = (-np.einsum("kmr,krsj,ksn->kmnj", inv, Frp, a)
          + np.einsum("kmr,krnj->kmnj", inv, dP))
    z = integrate(ControlledPath(y.reference, a[:, :-1], ap[:, :-1]), y)
    return z


def _development_family(P: OneForm, Q: OneForm | None, d: int, n: int):
    p = P.fn
    q = Q.fn if Q is not None else None

    def family(e, s):
        w, E = s[:d], s[d:].reshape(d, n)
        pe = (lambda x: p(x) + e * q(x)) if q is not None else p
        dw = pe(w) @ E                                      # (d, n)
        dpe = jax.jacfwd(pe)(w)                             # (d, d, d)
        dE = jnp.tensordot(dpe @ dw, E, axes=([1], [0]))    # (d, n, n) as [a, j, n]
        dE = jnp.swapaxes(dE, 1, 2)                         # [a, n, j]
        return jnp.concatenate([dw, dE.reshape(d * n, n)], axis=0)

    return family


@lru_cache(maxsize=16)
def _development_system(P: OneForm, Q: OneForm | None):
    """(G, dG): the development one-form in eps (parametrised) and its eps-derivative at 0."""
    d = P.dim
    n = d - 1
    fam = _development_family(P, Q, d, n)
    dim = d + d * n
    G = OneForm(lambda s, e: fam(e, s), dim, n, "development", params=0.0)
    if Q is None:
        return G, None
    dG = OneForm(lambda s: jax.jvp(lambda e: fam(e, s), (0.0,), (1.0,))[1], dim, n, "d-development")
    return G, dG


def _start_state(y0, E0=None):
    y0 = np.asarray(y0, dtype=float)
    n = y0.size - 1
    E0 = tangent_frame(y0)[:, :n] if E0 is None else np.asarray(E0, dtype=float)
    return np.concatenate([y0, E0.ravel()])


def development(z: ControlledPath, y0, E0=None, P: ProjectorField | None = None,
                tol: float = 1e-12) -> ControlledPath:
    """Sphere path w with dw = P(w) E dz, dE = DP(w)[dw] E (E the moving tangent frame)."""
    d = np.asarray(y0).size
    P = P or _default_field(d)
    G, _ = _development_system(P, None)
    sol = rde.solve_picard(G, z, _start_state(y0, E0), tol=tol)
    return ControlledPath(z.reference, sol.x.z[:, :d], sol.x.zprime[:, :d])


def connection_variation_field(P: ProjectorField, Q: OneForm, y: ControlledPath,
                               tol: float = 1e-12) -> ControlledPath:
    """d/deps of the development of the anti-development of y under P + eps Q."""
    d = y.vshape[0]
    z = anti_development(y, P=P)
    G, dG = _development_system(P, Q)
    w = rde.directional_derivative_F(G.at(0.0), z, _start_state(y.z[0]), dG, tol=tol)
    return ControlledPath(y.reference, w.z[:, :d], w.zprime[:, :d])


def varied_development(P: ProjectorField, Q: OneForm, y: ControlledPath, eps: float,
                       tol: float = 1e-12) -> ControlledPath:
    """The development of the anti-development of y under P + eps Q."""
    d = y.vshape[0]
    z = anti_development(y, P=P)
    G, _ = _development_system(P, Q)
    sol = rde.solve_picard(G.at(eps), z, _start_state(y.z[0]), tol=tol)
    return ControlledPath(y.reference, sol.x.z[:, :d], sol.x.zprime[:, :d])


# ------------------------------------------------------ flow on path space

def driver_field(y: ControlledPath, h, T: ControlledPath | None = None) -> ControlledPath:
    """The tangent field s -> T_s h_s with derivative T'_s h_s."""
    d = y.vshape[0]
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape != (y.reference.n + 1, d - 1):
        raise InputError(f"h must have shape {(y.reference.n + 1, d - 1)}")
    if np.any(h[0] != 0):
        raise InputError("h must start at 0")
    T = parallel_transport(y, check=False) if T is None else T
    E, Ep = T.z[:, :, :-1], T.zprime[:, :, :-1]
    return ControlledPath(y.reference, np.einsum("kan,kn->ka", E, h),
                          np.einsum("kanj,kn->kaj", Ep, h))


@dataclass
class FlowResult:
    paths: list                 # ControlledPaths y(t_k)
    times: np.ndarray
    constraint: np.ndarray      # max_s ||y_s| - 1| after each step
    frame_defect: np.ndarray    # tangent-frame orthonormality defect after each step


def _retract(vals, primes, start, P):
    norms = np.linalg.norm(vals, axis=1, keepdims=True)
    out = vals / norms
    out[0] = start
    shift = float(np.max(np.abs(out - vals)))
    return out, np.einsum("kab,kbj->kaj", P(out), primes), shift


def flow_integrate(y0_path: ControlledPath, h, dt: float, steps: int,
                   scheme: str = "rk4", T0=None) -> FlowResult:
    """Time-step dy(t)/dt = F_h(y(t)) on sphere paths with retraction after each step."""
    if scheme not in ("euler", "rk4"):
        raise InputError(f"unknown scheme {scheme!r}")
    if dt < 0 or steps < 0:
        raise InputError("dt and steps must be non-negative")
    check_manifold_path(y0_path)
    d = y0_path.vshape[0]
    P = _default_field(d)
    X = y0_path.reference
    T0 = tangent_frame(y0_path.z[0]) if T0 is None else np.asarray(T0, dtype=float)
    start = y0_path.z[0].copy()
    y = y0_path
    paths, times = [y], [0.0]
    constraint = [float(np.max(np.abs(np.linalg.norm(y.z, axis=1) - 1)))]
    defects = [frame_defect(_transport(P, y, T0))]
    if dt == 0 or steps == 0:
        return FlowResult(paths, np.array(times), np.array(constraint), np.array(defects))

    def field(p):
        return driver_field(p, h, _transport(P, p, T0))

    for k in range(steps):
        if scheme == "euler":
            inc = field(y) * dt
        else:
            k1 = field(y)
            k2 = field(y + k1 * (dt / 2))
            k3 = field(y + k2 * (dt / 2))
            k4 = field(y + k3 * dt)
            inc = (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6)
        raw = y + inc
        vals, primes, shift = _retract(raw.z.copy(), raw.zprime, start, P)
        if shift > RETRACT_MAX:
            raise StepSizeError(f"retraction moved the path by {shift:.3g} at flow step {k + 1}; reduce dt")
        y = ControlledPath(X, vals, primes)
        paths.append(y)
        times.append((k + 1) * dt)
        constraint.append(float(np.max(np.abs(np.linalg.norm(vals, axis=1) - 1))))
        defects.append(frame_defect(_transport(P, y, T0)))
    return FlowResult(paths, np.array(times), np.array(constraint), np.array(defects))


__all__ = [
    "ProjectorField", "sphere_projector_field", "sphere_projector", "tangent_direction",
    "check_manifold_path", "manifold_path", "sphere_curve", "sphere_brownian_path",
    "tangent_frame", "parallel_transport", "frame_defect", "holonomy_angle",
    "anti_development", "development", "connection_variation_field", "varied_development",
    "driver_field", "flow_integrate", "FlowResult", "same_reference",
]
