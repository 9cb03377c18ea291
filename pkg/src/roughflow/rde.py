"""Rough differential equations driven by controlled paths.

Solvers
    * :func:`solve_picard` iterates the fixed-point map on adaptively chosen
      subintervals and patches the pieces together.
    * :func:`solve_davie` is the explicit two-term scheme on a rough path.
    * :func:`linear_flow` steps linear equations dU = A(w)[dy] U along a frozen
      controlled path (derivative flows, parallel transport).

Derivatives of the solution map, and parameter expansions, are solved as
"jet" systems: the state (x, x1, x2) of Taylor coefficients in a parameter
eps obeys an RDE whose one-form is obtained by differentiating
eps -> f(eps, x + eps x1 + eps^2 x2 / 2) at eps = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from . import _kernels
from .controlled import ControlledPath, from_reference, same_reference
from .errors import ConvergenceError, DivergenceError, InputError
from .oneform import OneForm
from .roughpath import RoughPath, holder_norm

BLOWUP = 1e10
CONTRACTION_TARGET = 0.5


@dataclass
class Solution:
    x: ControlledPath
    diagnostics: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.x.z

    @property
    def endpoint(self) -> np.ndarray:
        return self.x.z[-1]


def full_norm(z: ControlledPath) -> float:
    """Controlled norm plus |Z'_0|, a genuine norm on paths started at 0."""
    return _full_norm_arrays(z.grid.nodes, z.reference.x, z.z, z.zprime, z.reference.alpha)


def _full_norm_arrays(t, x, zv, zp, alpha) -> float:
    n1 = t.shape[0]
    zf = np.ascontiguousarray(zv.reshape(n1, -1))
    zpf = np.ascontiguousarray(zp.reshape(n1, zf.shape[1], -1))
    t = np.ascontiguousarray(t)
    deriv, _, _ = _kernels.sup_ratio_increments(t, np.ascontiguousarray(zpf.reshape(n1, -1)), alpha)
    rem, _, _ = _kernels.sup_ratio_remainder(t, zf, zpf, np.ascontiguousarray(x), 2 * alpha)
    return float(deriv + rem + np.linalg.norm(zf[0]) + np.linalg.norm(zpf[0]))


def _norm_bound(t, x, dz, dzp, alpha) -> float:
    """Cheap O(N) upper bound of the full controlled norm of (dz, dzp)."""
    h = float(np.min(np.diff(t)))
    n1 = t.shape[0]
    dz = dz.reshape(n1, -1)
    dzp = dzp.reshape(n1, -1)
    sz = float(np.max(np.abs(dz))) * np.sqrt(dz.shape[1])
    szp = float(np.max(np.abs(dzp))) * np.sqrt(dzp.shape[1])
    osc = 2.0 * float(np.max(np.linalg.norm(x - x[0], axis=1)))
    return (2 * szp / h ** alpha + (2 * sz + szp * osc) / h ** (2 * alpha)
            + float(np.linalg.norm(dz[0]) + np.linalg.norm(dzp[0])))


def _check_blowup(values, what="solution"):
    if not np.all(np.isfinite(values)) or np.max(np.abs(values), initial=0.0) > BLOWUP:
        raise DivergenceError(f"{what} blew up (state norm above {BLOWUP:g})")


def _phi_arrays(F: OneForm, x0, zv, zp, dy, yp, area):
    """Fixed-point map on raw arrays over one subinterval."""
    xv = x0 + zv
    _check_blowup(xv)
    fx = F(xv)
    dfx = F.derivative(xv[:-1], 1)
    inc = np.einsum("kab,kb->ka", fx[:-1], dy)
    inc += np.einsum("kabc,kcp,kbj,kpj->ka", dfx, zp[:-1], yp[:-1], area, optimize=True)
    out = np.zeros_like(zv)
    out[1:] = np.cumsum(inc, axis=0)
    return out, np.einsum("kab,kbj->kaj", fx, yp)


def _check_driver(F: OneForm, y: ControlledPath, x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (F.dim,):
        raise InputError(f"x0 must have shape ({F.dim},), got {x0.shape}")
    if y.vshape != (F.ncols,):
        raise InputError(f"{F.name} expects a driver in R^{F.ncols}, got values of shape {y.vshape}")
    return x0


def picard_map(F: OneForm, y: ControlledPath, x0, z: ControlledPath) -> ControlledPath:
    """(z, z') -> (int F(x0 + z) dy, F(x0 + z) y')."""
    x0 = _check_driver(F, y, x0)
    if not same_reference(y.reference, z.reference):
        raise InputError("z and y are controlled by different rough paths")
    X = y.reference
    zv, zp = _phi_arrays(F, x0, z.z, z.zprime, np.diff(y.z, axis=0), y.zprime, X.area)
    return ControlledPath(X, zv, zp)


def solve_picard(F: OneForm, y: ControlledPath, x0, tol: float = 1e-10,
                 max_iter: int = 500) -> Solution:
    """Fixed point of the Picard map with adaptive bisection and patching.

    Each patch starts from the whole remaining horizon and is halved until the
    measured contraction factor of successive iterates falls below 1/2.
    Blow-up of the state raises :class:`DivergenceError`.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    x0 = _check_driver(F, y, x0)
    X = y.reference
    t, xr, alpha = X.grid.nodes, X.x, X.alpha
    dy = np.diff(y.z, axis=0)
    n = X.n
    d = F.dim
    values = np.empty((n + 1, d))
    values[0] = x0
    patches, factors, iterations = [], [], []
    start, xs = 0, x0
    while start < n:
        length = n - start
        while True:
            sl = slice(start, start + length + 1)
            args = (dy[start:start + length], y.zprime[sl], X.area[start:start + length])

            def phi(zv, zp):
                return _phi_arrays(F, xs, zv, zp, *args)

            def dist(a, b):
                return _full_norm_arrays(t[sl], xr[sl], a[0] - b[0], a[1] - b[1], alpha)

            z0 = (np.zeros((length + 1, d)), np.zeros((length + 1, d, X.dim)))
            z1 = phi(*z0)
            trivial = not (np.any(z1[0]) or np.any(z1[1]))
            if trivial:
                break   # the seed is already the fixed point
            z2 = phi(*z1)
            z3 = phi(*z2)
            # the zero seed has no Hoelder part, so the first ratio is skewed
            step = dist(z2, z1)
            rho = dist(z3, z2) / step if step > 0 else 0.0
            # a single step is exact after three iterations, so accept it regardless
            if rho < CONTRACTION_TARGET or length == 1:
                break
            length //= 2
        if trivial:
            prev, cur, it, rho = z1, z1, 1, 0.0
        else:
            prev, cur, it = z2, z3, 3
        while _norm_bound(t[sl], xr[sl], cur[0] - prev[0], cur[1] - prev[1], alpha) >= tol:
            prev, cur = cur, phi(*cur)
            it += 1
            if it > max_iter:
                raise ConvergenceError(f"Picard iteration did not reach tol={tol:g} in {max_iter} steps")
        values[start + 1:start + length + 1] = xs + cur[0][1:]
        xs = values[start + length].copy()
        patches.append((start, start + length))
        factors.append(rho)
        iterations.append(it)
        start += length
    deriv = np.einsum("kab,kbj->kaj", F(values), y.zprime)
    sol = ControlledPath(X, values, deriv)
    resid_v, resid_p = _phi_arrays(F, x0, values - x0, deriv, dy, y.zprime, X.area)
    residual = _full_norm_arrays(t, xr, resid_v - (values - x0), resid_p - deriv, alpha)
    return Solution(sol, {"patches": patches, "contraction": factors,
                          "iterations": iterations, "residual": residual})


def _davie_step_fn(F: OneForm):
    if "davie" not in F._compiled:
        f = F.fn
        df = jax.jacfwd(f)

        def step(x, inp):
            dx, area = inp
            fx = f(x)
            xn = x + fx @ dx + jnp.einsum("ajc,ck,kj->a", df(x), fx, area)
            return xn, xn

        def run(x0, dxs, areas):
            _, xs = jax.lax.scan(step, x0, (dxs, areas))
            return xs

        F._compiled["davie"] = jax.jit(run)
        F._compiled["davie_batch"] = jax.jit(jax.vmap(run, in_axes=(None, 0, 0)))
    return F._compiled["davie"], F._compiled["davie_batch"]


def solve_davie(F: OneForm, X: RoughPath, x0) -> Solution:
    """x_{i+1} = x_i + F(x_i) X_{i,i+1} + F'(x_i) F(x_i) XX_{i,i+1}."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (F.dim,) or X.dim != F.ncols:
        raise InputError(f"{F.name} needs x0 in R^{F.dim} and a rough path over R^{F.ncols}")
    run, _ = _davie_step_fn(F)
    xs = np.asarray(run(x0, X.increments, X.area))
    values = np.vstack([x0, xs])
    _check_blowup(values)
    return Solution(ControlledPath(X, values, F(values)), {"scheme": "davie"})


def davie_endpoints(F: OneForm, increments, areas, x0):
    """Batched Davie endpoints over samples; returns (endpoints, failed_mask)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _, run = _davie_step_fn(F)
    xs = np.asarray(run(x0, np.asarray(increments), np.asarray(areas)))
    norms = np.max(np.abs(xs), axis=(1, 2))
    failed = ~np.isfinite(norms) | (norms > BLOWUP)
    return xs[:, -1], failed


def linear_flow(A, DA, wprime, yprime, dy, area, U0=None, retract=None):
    """Two-term stepping of dU = A(w)[dy] U and its companion dV = -V A(w)[dy].

    V steps by the inverse of each U step.

    Shapes: ``A`` (N+1, nb, m, m) are the matrices A_b(w_t); ``DA`` (N+1, nb, ne, m, m)
    their derivatives along state direction e; ``wprime`` (N+1, ne, l) and
    ``yprime`` (N+1, nb, l) the Gubinelli derivatives of the frozen path w and
    the driver y; ``dy`` (N, nb) and ``area`` (N, l, l).  Returns (U, V) with
    U_0 = U0 (identity by default) and V_0 = U0^{-1}.  ``retract(k, U_k)``, if
    given, is applied to U after each step (V is then kept as its inverse).
    """
    n, m = dy.shape[0], A.shape[-1]
    ay = np.einsum("kbmn,kbj->kjmn", A, yprime)
    day = np.einsum("kbemn,kbj,kep->kjpmn", DA, yprime, wprime)
    first = np.einsum("kbmn,kb->kmn", A[:-1], dy)
    second = np.einsum("kpj,kjpmn->kmn", area, day[:-1])
    prod_fw = np.einsum("kpj,kjmr,kprn->kmn", area, ay[:-1], ay[:-1])
    eye = np.eye(m)
    step_u = eye + first + second + prod_fw
    # inverting each step agrees with the companion two-term step to third
    # order and keeps U V = I at every node
    step_v = np.linalg.inv(step_u)
    U = np.empty((n + 1, m, m))
    V = np.empty((n + 1, m, m))
    U[0] = np.eye(m) if U0 is None else U0
    V[0] = np.linalg.inv(U[0])
    for k in range(n):
        U[k + 1] = step_u[k] @ U[k]
        if retract is None:
            V[k + 1] = V[k] @ step_v[k]
        else:
            U[k + 1] = retract(k + 1, U[k + 1])
            V[k + 1] = np.linalg.inv(U[k + 1])
    _check_blowup(U, "linear flow")
    _check_blowup(V, "inverse flow")
    return U, V, ay


def derivative_flow(F: OneForm, X: RoughPath, x0):
    """Jacobian flow U_t = dx_t/dx_0 and its inverse, both as matrix-valued controlled paths."""
    sol = solve_davie(F, X, x0)
    x = sol.values
    dfx = F.derivative(x, 1)                       # (N+1, d, l, d)
    A = np.transpose(dfx, (0, 2, 1, 3))            # A_j = DF[:, j, :]
    DA = np.transpose(F.derivative(x, 2), (0, 2, 4, 1, 3))  # along state direction e
    eye = np.broadcast_to(np.eye(X.dim), (X.n + 1, X.dim, X.dim))
    U, V, ay = linear_flow(A, DA, sol.x.zprime, eye, X.increments, X.area)
    u_prime = np.einsum("kjmr,krn->kmnj", ay, U)
    v_prime = -np.einsum("kmr,kjrn->kmnj", V, ay)
    return ControlledPath(X, U, u_prime), ControlledPath(X, V, v_prime), sol


# --------------------------------------------------------------------- jets

def jet_oneform(family: Callable, dim: int, ncols: int, order: int, name: str = "jet") -> OneForm:
    """One-form of the Taylor-coefficient system of ``family(eps, x)`` up to ``order``.

    The state stacks (x, x1, x2) where x2 is the second eps-derivative (not
    halved).  Block k of the one-form is d^k/deps^k family(eps, x + eps x1 + eps^2 x2/2).
    """
    if order not in (0, 1, 2):
        raise InputError("jet systems are supported up to order 2")

    def fn(s):
        xs = s.reshape(order + 1, dim)

        def along(e):
            pos = xs[0]
            if order >= 1:
                pos = pos + e * xs[1]
            if order >= 2:
                pos = pos + 0.5 * e * e * xs[2]
            return family(e, pos)

        blocks = [along(0.0)]
        if order >= 1:
            blocks.append(jax.jvp(along, (0.0,), (1.0,))[1])
        if order >= 2:
            blocks.append(jax.jvp(lambda e: jax.jvp(along, (e,), (1.0,))[1], (0.0,), (1.0,))[1])
        return jnp.concatenate(blocks, axis=0)

    return OneForm(fn, dim * (order + 1), ncols, name)


def _jet_solve(family, dim, ncols, y, x0, order, tol):
    G = jet_oneform(family, dim, ncols, order)
    s0 = np.concatenate([np.asarray(x0, dtype=float)] + [np.zeros(dim)] * order)
    sol = solve_picard(G, y, s0, tol=tol)
    X = y.reference
    blocks = []
    for k in range(order + 1):
        sl = slice(k * dim, (k + 1) * dim)
        blocks.append(ControlledPath(X, sol.x.z[:, sl], sol.x.zprime[:, sl]))
    return blocks, sol


def concat_controlled(*paths: ControlledPath) -> ControlledPath:
    X = paths[0].reference
    for p in paths[1:]:
        if not same_reference(X, p.reference):
            raise InputError("controlled paths over different reference rough paths")
    return ControlledPath(X, np.concatenate([p.z for p in paths], axis=1),
                          np.concatenate([p.zprime for p in paths], axis=1))


def ito_lyons(F: OneForm, y: ControlledPath, x0, tol: float = 1e-10) -> ControlledPath:
    """The solution map (F, y) -> x as a controlled path."""
    return solve_picard(F, y, x0, tol=tol).x


def directional_derivative_y(F: OneForm, y: ControlledPath, x0, h: ControlledPath,
                             tol: float = 1e-12) -> ControlledPath:
    """v solving dv = DF(x)[v] dy + F(x) dh, v_0 = 0."""
    x0 = _check_driver(F, y, x0)
    if h.vshape != y.vshape:
        raise InputError("direction h must take values in the driver space")
    f = F.fn
    family = lambda e, x: jnp.concatenate([f(x), e * f(x)], axis=1)
    blocks, _ = _jet_solve(family, F.dim, 2 * F.ncols, concat_controlled(y, h), x0, 1, tol)
    return blocks[1]


def second_directional_derivative_y(F: OneForm, y: ControlledPath, x0, h: ControlledPath,
                                    tol: float = 1e-12):
    """(v, v2): first and second derivatives of eps -> I(F, y + eps h)."""
    x0 = _check_driver(F, y, x0)
    f = F.fn
    family = lambda e, x: jnp.concatenate([f(x), e * f(x)], axis=1)
    blocks, _ = _jet_solve(family, F.dim, 2 * F.ncols, concat_controlled(y, h), x0, 2, tol)
    return blocks[1], blocks[2]


def directional_derivative_F(F: OneForm, y: ControlledPath, x0, dF: OneForm,
                             tol: float = 1e-12) -> ControlledPath:
    """w solving dw = DF(x)[w] dy + dF(x) dy, w_0 = 0."""
    x0 = _check_driver(F, y, x0)
    if (dF.dim, dF.ncols) != (F.dim, F.ncols):
        raise InputError("dF must have the same shape as F")
    f, g = F.fn, dF.fn
    blocks, _ = _jet_solve(lambda e, x: f(x) + e * g(x), F.dim, F.ncols, y, x0, 1, tol)
    return blocks[1]


@dataclass
class TaylorResult:
    terms: list            # Z^0, ..., Z^m as ControlledPaths
    epsilons: np.ndarray
    residuals: np.ndarray  # sup-norm of z^eps - sum eps^i Z^i
    slope: float


def taylor_expand(sigma: Callable, X: RoughPath, x0, order: int = 2,
                  drift: Callable | None = None, lam=None,
                  epsilons=(1e-1, 10 ** -1.5, 1e-2, 10 ** -2.5, 1e-3),
                  tol: float = 1e-12) -> TaylorResult:
    """Expansion z^eps = Z^0 + eps Z^1 + eps^2 Z^2 + o(eps^2) of

        dz = sigma(eps, z) dX + drift(eps, z) dLambda.

    ``sigma`` and ``drift`` are jax-traceable in both arguments so that their
    eps-derivatives are exact.  With a drift the equation is driven by the
    rough path over (X, Lambda), Lambda taken piecewise linear.
    """
    if order > 2 or order < 0:
        raise InputError("taylor_expand supports orders 0, 1, 2")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    try:
        probe = np.asarray(sigma(0.0, jnp.asarray(x0)))
    except Exception as exc:  # noqa: BLE001
        raise InputError(f"sigma cannot be evaluated: {exc}") from exc
    if probe.shape != (dim, X.dim):
        raise InputError(f"sigma must return shape {(dim, X.dim)}, got {probe.shape}")
    if drift is not None:
        from .roughpath import joint_extend
        Xh = joint_extend(X, lam)
        ell2 = Xh.dim - X.dim
        family = lambda e, x: jnp.concatenate([sigma(e, x), drift(e, x)], axis=1)
    else:
        Xh, ell2 = X, 0
        family = sigma
    ncols = X.dim + ell2
    y = from_reference(Xh)
    G = jet_oneform(family, dim, ncols, order)
    if not np.all(np.isfinite(G.derivative(np.concatenate([x0] * (order + 1)), 1))):
        raise InputError("family is not smooth at the initial condition")
    blocks, _ = _jet_solve(family, dim, ncols, y, x0, order, tol)
    terms = [blocks[0]]
    for k in range(1, order + 1):
        terms.append(blocks[k] * (1.0 if k == 1 else 0.5))
    eps = np.asarray(epsilons, dtype=float)
    residuals = np.empty(eps.size)
    fam = OneForm(lambda x, e: family(e, x), dim, ncols, "family", params=0.0)
    for i, e in enumerate(eps):
        ze = solve_picard(fam.at(e), y, x0, tol=tol).values
        approx = sum((e ** k) * terms[k].z for k in range(order + 1))
        residuals[i] = float(np.max(np.linalg.norm(ze - approx, axis=1)))
    keep = residuals > 0
    slope = float(np.polyfit(np.log(eps[keep]), np.log(residuals[keep]), 1)[0]) if keep.sum() >= 2 else np.inf
    return TaylorResult(terms, eps, residuals, slope)


def perturbed(F: OneForm, dF: OneForm) -> OneForm:
    """The family eps -> F + eps dF as a parametrised one-form (use ``.at(eps)``)."""
    f, g = F.fn, dF.fn
    return OneForm(lambda x, e: f(x) + e * g(x), F.dim, F.ncols, f"{F.name}+eps*{dF.name}", params=0.0)


def contraction_ratio(F: OneForm, y: ControlledPath, x0, z1: ControlledPath,
                      z2: ControlledPath) -> float:
    """||Phi z1 - Phi z2|| / ||z1 - z2|| in the full controlled norm."""
    num = full_norm(picard_map(F, y, x0, z1) - picard_map(F, y, x0, z2))
    return num / full_norm(z1 - z2)


def fd_remainders(solve_at: Callable[[float], np.ndarray], base: np.ndarray,
                  derivative: np.ndarray, epsilons, norm=None):
    """|solve(eps) - base - eps * derivative| / eps for each eps."""
    norm = norm or (lambda a: float(np.max(np.abs(a))))
    out = []
    for e in epsilons:
        out.append(norm(solve_at(e) - base - e * derivative) / e)
    return np.asarray(out)


__all__ = [
    "Solution", "picard_map", "solve_picard", "solve_davie", "davie_endpoints",
    "linear_flow", "derivative_flow", "directional_derivative_y",
    "second_directional_derivative_y", "directional_derivative_F", "taylor_expand",
    "TaylorResult", "jet_oneform", "ito_lyons", "full_norm", "contraction_ratio",
    "fd_remainders", "perturbed", "concat_controlled", "holder_norm",
]
