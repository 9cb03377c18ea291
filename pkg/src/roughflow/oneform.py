"""One-forms x -> L(R^l, R^d) with exact derivatives.

A one-form wraps a jax-traceable pointwise function ``fn(x) -> (d, l)``;
derivatives of every order come from forward-mode autodiff and are laid out
with the differentiation slots last: ``D^k F(x)[a, j, c1, ..., ck]``.
Evaluation is batched over leading axes and run in fixed-size chunks so that
compiled kernels are reused across grid sizes.  A one-form may carry a
parameter array (``fn(x, params)``); forms that differ only in their
parameters share compiled kernels.
"""

from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InputError

jax.config.update("jax_enable_x64", True)


SMALL, CHUNK = 32, 512


class OneForm:
    def __init__(self, fn, dim: int, ncols: int, name: str = "oneform", params=None,
                 _kernels: dict | None = None):
        self.raw = fn
        self.params = None if params is None else jnp.asarray(params, dtype=jnp.float64)
        self.dim = int(dim)
        self.ncols = int(ncols)
        self.name = name
        self._compiled = {}
        self._kernels = {} if _kernels is None else _kernels
        out = jax.eval_shape(self.fn, jax.ShapeDtypeStruct((self.dim,), jnp.float64))
        if out.shape != (self.dim, self.ncols):
            raise InputError(
                f"{name}: expected values of shape {(self.dim, self.ncols)}, got {out.shape}")

    @property
    def fn(self):
        """Pointwise jax function x -> (d, l) with the parameters bound."""
        if self.params is None:
            return self.raw
        raw, p = self.raw, self.params
        return lambda x: raw(x, p)

    def at(self, params) -> "OneForm":
        """The same parametrised family at other parameter values."""
        if self.params is None:
            raise InputError(f"{self.name} has no parameters")
        return OneForm(self.raw, self.dim, self.ncols, self.name, params, self._kernels)

    def __repr__(self):
        return f"OneForm({self.name!r}, dim={self.dim}, ncols={self.ncols})"

    def _kernel(self, order: int):
        if order not in self._kernels:
            f = self.raw
            if self.params is None:
                for _ in range(order):
                    f = jax.jacfwd(f)
                self._kernels[order] = jax.jit(jax.vmap(f))
            else:
                for _ in range(order):
                    f = jax.jacfwd(f, argnums=0)
                self._kernels[order] = jax.jit(jax.vmap(f, in_axes=(0, None)))
        return self._kernels[order]

    def eval(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InputError(f"{self.name}: points must have trailing size {self.dim}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.dim)
        b = flat.shape[0]
        size = SMALL if b <= SMALL else CHUNK
        padded = np.zeros((-(-b // size) * size, self.dim))
        padded[:b] = flat
        kernel = self._kernel(order)
        extra = () if self.params is None else (self.params,)
        parts = [np.asarray(kernel(padded[k:k + size], *extra))
                 for k in range(0, padded.shape[0], size)]
        out = np.concatenate(parts)[:b]
        return out.reshape(lead + out.shape[1:])

    __call__ = eval

    def derivative(self, x, order: int = 1) -> np.ndarray:
        return self.eval(x, order)

    def __add__(self, other: "OneForm") -> "OneForm":
        if (self.dim, self.ncols) != (other.dim, other.ncols):
            raise InputError("one-forms of different shapes cannot be added")
        f, g = self.fn, other.fn
        return OneForm(lambda x: f(x) + g(x), self.dim, self.ncols, f"{self.name}+{other.name}")

    def __mul__(self, c: float) -> "OneForm":
        f = self.fn
        c = float(c)
        return OneForm(lambda x: c * f(x), self.dim, self.ncols, f"{c}*{self.name}")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def symmetry_defect(self, points, order: int = 2, n_perm: int = 8, seed: int = 0) -> float:
        """Max deviation of D^k F from symmetry under random slot permutations."""
        if order < 2:
            return 0.0
        rng = np.random.default_rng(seed)
        d = self.derivative(np.atleast_2d(points), order)
        base = d.ndim - order
        worst = 0.0
        for _ in range(n_perm):
            perm = list(range(base)) + list(base + rng.permutation(order))
            worst = max(worst, float(np.max(np.abs(d - np.transpose(d, perm)))))
        return worst

    def lip_gamma_estimate(self, gamma: float = 3.0, box: float = 1.0,
                           n_samples: int = 256, seed: int = 0) -> float:
        """Sampled proxy of the Stein Lip_gamma norm on [-box, box]^d."""
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-box, box, size=(n_samples, self.dim))
        top = int(np.floor(gamma))
        if top == gamma:
            top -= 1
        total = 0.0
        for k in range(top + 1):
            dk = self.derivative(pts, k).reshape(n_samples, -1)
            total += float(np.max(np.linalg.norm(dk, axis=1)))
        frac = gamma - top
        dk = self.derivative(pts, top).reshape(n_samples, -1)
        i, j = rng.integers(0, n_samples, size=(2, 4 * n_samples))
        keep = i != j
        num = np.linalg.norm(dk[i[keep]] - dk[j[keep]], axis=1)
        den = np.linalg.norm(pts[i[keep]] - pts[j[keep]], axis=1) ** frac
        return total + float(np.max(num / den))


def hstack(*forms: OneForm) -> OneForm:
    """Column-wise concatenation: a one-form on the product driver space."""
    dim = forms[0].dim
    if any(f.dim != dim for f in forms):
        raise InputError("hstack needs one-forms on the same state space")
    fns = [f.fn for f in forms]
    return OneForm(lambda x: jnp.concatenate([f(x) for f in fns], axis=1), dim,
                   sum(f.ncols for f in forms), "|".join(f.name for f in forms))


def zero(dim: int, ncols: int) -> OneForm:
    return OneForm(lambda x: jnp.zeros((dim, ncols)) * x[0], dim, ncols, "zero")


def constant(M) -> OneForm:
    M = jnp.asarray(np.atleast_2d(np.asarray(M, dtype=float)))
    return OneForm(lambda x: M + 0.0 * x[0], M.shape[0], M.shape[1], "constant")


def linear(A) -> OneForm:
    """F(x)[a, j] = sum_c A[a, j, c] x_c."""
    A = jnp.asarray(np.asarray(A, dtype=float))
    if A.ndim != 3 or A.shape[0] != A.shape[2]:
        raise InputError("linear one-form needs a (d, l, d) coefficient array")
    return OneForm(lambda x: jnp.einsum("ajc,c->aj", A, x), A.shape[0], A.shape[1], "linear")


def scalar_linear(c: float = 1.0) -> OneForm:
    """F(x) = c x on R with a one-dimensional driver."""
    return linear([[[c]]])


def rotation() -> OneForm:
    """F(x) = J x on R^2 with J the quarter-turn; flows preserve |x|."""
    return linear([[[0.0, -1.0]], [[1.0, 0.0]]])


def sin_field(A, B, W, phi) -> OneForm:
    """F(x)[a, j] = A[a, j] + B[a, j] sin(W[a, j] . x + phi[a, j]); bounded with all derivatives."""
    A, B, phi = (jnp.asarray(np.asarray(v, dtype=float)) for v in (A, B, phi))
    W = jnp.asarray(np.asarray(W, dtype=float))
    d, ell = A.shape
    return OneForm(lambda x: A + B * jnp.sin(W @ x + phi), d, ell, "sin-bounded")


def random_sin_field(dim: int, ncols: int, seed: int = 0, scale: float = 0.5) -> OneForm:
    rng = np.random.default_rng(seed)
    A = np.eye(dim, ncols) + 0.1 * rng.standard_normal((dim, ncols))
    B = scale * rng.uniform(0.2, 1.0, size=(dim, ncols))
    W = rng.standard_normal((dim, ncols, dim))
    phi = rng.uniform(0, 2 * np.pi, size=(dim, ncols))
    return sin_field(A, B, W, phi)


def default_sin_field() -> OneForm:
    """The fixed two-dimensional sin-based field used by the CLI and acceptance runs."""
    A = np.eye(2)
    B = 0.5 * np.ones((2, 2))
    W = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]])
    phi = np.array([[0.0, 0.5], [1.0, 1.5]])
    return sin_field(A, B, W, phi)
