import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughflow import oneform as of
from roughflow import rde
from roughflow.controlled import ControlledPath, compose_smooth, from_reference
from roughflow.errors import ConvergenceError, DivergenceError, InputError
from roughflow.roughpath import Grid, lift_piecewise_linear, sample_gaussian_driver


def lift(fn, n, horizon=1.0, alpha=0.5):
    grid = Grid.uniform(n, horizon)
    return lift_piecewise_linear(fn(grid.nodes), grid, alpha)


def sin_lift(n):
    return lift(np.sin, n)


def bm(n, dim=2, seed=0, alpha=0.45):
    grid = Grid.uniform(n)
    return lift_piecewise_linear(sample_gaussian_driver(0.5, dim, grid, seed), grid, alpha)


def test_zero_field_is_trivial():
    X = bm(64)
    y = from_reference(X)
    sol = rde.solve_picard(of.zero(2, 2), y, [1.0, -2.0])
    assert np.all(sol.values == [1.0, -2.0])
    assert sol.diagnostics["iterations"] == [1]
    z = compose_smooth(np.sin, lambda v: np.cos(v)[:, :, None] * np.eye(2), y)
    out = rde.picard_map(of.zero(2, 2), y, [0.0, 0.0], z)
    assert np.all(out.z == 0) and np.all(out.zprime == 0)
    assert np.all(rde.solve_davie(of.zero(2, 2), X, [1.0, -2.0]).values == [1.0, -2.0])


def test_scalar_linear_closed_form():
    X = sin_lift(2 ** 12)
    sol = rde.solve_picard(of.scalar_linear(), from_reference(X), [1.0])
    assert np.max(np.abs(sol.values[:, 0] - np.exp(X.x[:, 0]))) < 1e-6
    dav = rde.solve_davie(of.scalar_linear(), X, [1.0])
    assert np.max(np.abs(dav.values[:, 0] - np.exp(X.x[:, 0]))) < 1e-5


def test_rotation_closed_form_and_norm():
    X = lift(lambda t: t, 2 ** 10)
    sol = rde.solve_picard(of.rotation(), from_reference(X), [1.0, 0.0])
    t = X.grid.nodes
    assert np.max(np.abs(sol.values - np.column_stack([np.cos(t), np.sin(t)]))) < 1e-6
    assert np.max(np.abs(np.linalg.norm(sol.values, axis=1) - 1)) < 1e-8


def test_fixed_point_and_residual():
    X = bm(128, seed=3)
    y = from_reference(X)
    F = of.default_sin_field()
    sol = rde.solve_picard(F, y, [0.1, 0.2], tol=1e-11)
    assert sol.diagnostics["residual"] < 1e-9
    patches = sol.diagnostics["patches"]
    assert patches[0][0] == 0 and patches[-1][1] == X.n
    assert all(a[1] == b[0] for a, b in zip(patches, patches[1:]))
    # the Gubinelli derivative is F(x)
    assert np.allclose(sol.x.zprime, F(sol.values), atol=1e-8)
    # on a single patch, Phi(x - x0) = x - x0
    if len(patches) == 1:
        z = ControlledPath(X, sol.values - sol.values[0], sol.x.zprime)
        assert np.max(np.abs(rde.picard_map(F, y, sol.values[0], z).z - z.z)) < 1e-9


def test_contraction_on_short_interval():
    X = bm(256, seed=1).slice(0, 8)
    y = from_reference(X)
    F = of.default_sin_field()
    z1 = compose_smooth(np.sin, lambda v: np.cos(v)[:, :, None] * np.eye(2), y)
    z2 = compose_smooth(np.cos, lambda v: -np.sin(v)[:, :, None] * np.eye(2), y)
    assert rde.contraction_ratio(F, y, [0.0, 0.0], z1, z2) < 1.0


def test_blowup_and_budget_errors():
    X = lift(lambda t: t, 64, horizon=1.0)
    square = of.OneForm(lambda x: (3.0 * x * x)[:, None], 1, 1, "square")
    # x' = 3 x^2 from x0 = 1 explodes at t = 1/3
    with pytest.raises((DivergenceError, ConvergenceError)):
        rde.solve_picard(square, from_reference(X), [1.0])
    with pytest.raises(DivergenceError):
        rde.solve_davie(square, X, [1.0])
    with pytest.raises(ConvergenceError):
        rde.solve_picard(of.default_sin_field(), from_reference(bm(64)), [0.0, 0.0], max_iter=3)
    with pytest.raises(InputError):
        rde.solve_picard(of.rotation(), from_reference(bm(8)), [0.0, 0.0], tol=0.0)
    with pytest.raises(InputError):
        rde.solve_picard(of.rotation(), from_reference(bm(8)), [0.0])


def test_davie_matches_picard_on_smooth_driver():
    X = lift(lambda t: np.column_stack([np.sin(3 * t), np.cos(2 * t)]), 2 ** 11)
    F = of.default_sin_field()
    a = rde.solve_davie(F, X, [0.2, -0.1]).values
    b = rde.solve_picard(F, from_reference(X), [0.2, -0.1]).values
    assert np.max(np.abs(a - b)) < 1e-5


def test_davie_local_error_rate():
    """RMS of one coarse Davie step against the fine flow, pooled over four paths."""
    F = of.default_sin_field()
    blocks = 2 ** np.arange(2, 8)
    sq = np.zeros(blocks.size)
    for seed in range(4):
        X = bm(2 ** 12, seed=seed, alpha=0.45)
        x = rde.solve_davie(F, X, [0.0, 0.0]).values
        for i, b in enumerate(blocks):
            C = X.coarsen(int(b))
            xs = x[::b]
            fx = F(xs[:-1])
            step = (xs[:-1] + np.einsum("kaj,kj->ka", fx, C.increments)
                    + np.einsum("kajc,kci,kij->ka", F.derivative(xs[:-1]), fx, C.area))
            sq[i] += np.mean(np.sum((step - xs[1:]) ** 2, axis=1))
    slope = np.polyfit(np.log(blocks / 2 ** 12), 0.5 * np.log(sq), 1)[0]
    assert slope >= 3 * 0.45 - 0.1


def test_derivative_flow_examples():
    X = bm(256, seed=2)
    U, V, _ = rde.derivative_flow(of.constant(np.eye(2)), X, [0.0, 0.0])
    assert np.allclose(U.z, np.eye(2), atol=1e-14)

    S = sin_lift(2 ** 10)
    U, V, _ = rde.derivative_flow(of.scalar_linear(), S, [2.0])
    assert np.max(np.abs(U.z[:, 0, 0] - np.exp(S.x[:, 0]))) < 1e-5

    F = of.default_sin_field()
    U, V, _ = rde.derivative_flow(F, X, [0.3, 0.1])
    assert np.max(np.abs(np.einsum("kab,kbc->kac", U.z, V.z) - np.eye(2))) < 1e-6

    R, _, _ = rde.derivative_flow(of.rotation(), bm(256, dim=1, seed=2), [1.0, 0.0])
    assert np.all(np.linalg.det(R.z) > 0)


def test_derivative_flow_matches_finite_differences():
    X = bm(512, seed=4)
    F = of.default_sin_field()
    x0 = np.array([0.2, -0.3])
    U, _, _ = rde.derivative_flow(F, X, x0)
    eps = 1e-6
    for e in np.eye(2):
        fd = (rde.solve_davie(F, X, x0 + eps * e).values - rde.solve_davie(F, X, x0 - eps * e).values) / (2 * eps)
        assert np.max(np.abs(fd - U.z @ e)) < 1e-6


def test_directional_derivative_zero_cases():
    S = sin_lift(256)
    y = from_reference(S)
    h = compose_smooth(lambda v: v ** 2, lambda v: 2 * v[:, :, None], y)
    v = rde.directional_derivative_y(of.zero(1, 1), y, [1.0], h)
    assert np.all(v.z == 0)
    w = rde.directional_derivative_F(of.scalar_linear(), y, [1.0], of.zero(1, 1))
    assert np.all(w.z == 0)
    # F = 0 and dF = L: w = L (y_t - y_0)
    L = np.array([[2.5]])
    w = rde.directional_derivative_F(of.zero(1, 1), y, [1.0], of.constant(L))
    assert np.allclose(w.z[:, 0], 2.5 * (S.x[:, 0] - S.x[0, 0]), atol=1e-14)


def test_directional_derivative_closed_form():
    S = sin_lift(2 ** 12)
    y = from_reference(S)
    h = compose_smooth(lambda v: v ** 2, lambda v: 2 * v[:, :, None], y)
    v = rde.directional_derivative_y(of.scalar_linear(), y, [1.5], h)
    g, hv = S.x[:, 0], h.z[:, 0]
    assert np.max(np.abs(v.z[:, 0] - 1.5 * np.exp(g - g[0]) * (hv - hv[0]))) < 1e-6


@settings(max_examples=8)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_directional_derivatives_are_linear(a, b):
    X = bm(64, seed=6)
    y = from_reference(X)
    F = of.default_sin_field()
    x0 = [0.1, 0.0]
    h1 = compose_smooth(np.sin, lambda v: np.cos(v)[:, :, None] * np.eye(2), y)
    h2 = compose_smooth(lambda v: v ** 2, lambda v: 2 * v[:, :, None] * np.eye(2), y)
    lhs = rde.directional_derivative_y(F, y, x0, a * h1 + b * h2).z
    rhs = a * rde.directional_derivative_y(F, y, x0, h1).z + b * rde.directional_derivative_y(F, y, x0, h2).z
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    G1, G2 = of.random_sin_field(2, 2, 1), of.random_sin_field(2, 2, 2)
    lhs = rde.directional_derivative_F(F, y, x0, a * G1 + b * G2).z
    rhs = a * rde.directional_derivative_F(F, y, x0, G1).z + b * rde.directional_derivative_F(F, y, x0, G2).z
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_second_directional_derivative_controls_fd_remainder():
    X = bm(128, seed=7)
    y = from_reference(X)
    F = of.default_sin_field()
    x0 = np.array([0.0, 0.2])
    h = compose_smooth(np.sin, lambda v: np.cos(v)[:, :, None] * np.eye(2), y)
    v, v2 = rde.second_directional_derivative_y(F, y, x0, h)
    base = rde.solve_picard(F, y, x0, tol=1e-12).values
    ratios = []
    for e in (1e-1, 1e-2):
        moved = rde.solve_picard(F, y + e * h, x0, tol=1e-12).values
        ratios.append(np.max(np.abs(moved - base - e * v.z)) / e ** 2)
    # the quadratic remainder is bounded by the second derivative
    bound = 0.5 * np.max(np.abs(v2.z))
    assert all(r <= 1.5 * bound + 1e-6 for r in ratios)
    assert ratios[1] == pytest.approx(bound, rel=0.2)


def test_taylor_drift_example():
    X = sin_lift(256)
    res = rde.taylor_expand(lambda e, x: 0.0 * x[:, None], X, [0.5], drift=lambda e, x: jnp.ones((1, 1)),
                            lam=X.grid.nodes)
    t = X.grid.nodes
    assert np.allclose(res.terms[0].z[:, 0], 0.5 + t, atol=1e-12)
    assert np.all(np.abs(res.terms[1].z) < 1e-14) and np.all(np.abs(res.terms[2].z) < 1e-14)


def test_taylor_eps_independent_family():
    X = sin_lift(256)
    res = rde.taylor_expand(lambda e, x: x[:, None], X, [1.0])
    assert np.max(np.abs(res.terms[1].z)) == 0 and np.max(np.abs(res.terms[2].z)) == 0
    assert np.max(res.residuals) < 1e-9


def test_taylor_closed_form_terms():
    X = sin_lift(1024)
    res = rde.taylor_expand(lambda e, x: e * x[:, None], X, [1.0])
    g = X.x[:, 0] - X.x[0, 0]
    assert np.max(np.abs(res.terms[1].z[:, 0] - g)) < 1e-6
    assert np.max(np.abs(res.terms[2].z[:, 0] - g ** 2 / 2)) < 1e-6
    assert res.slope >= 2.9


def test_taylor_errors():
    X = sin_lift(64)
    with pytest.raises(InputError):
        rde.taylor_expand(lambda e, x: e * x[:, None], X, [1.0], order=3)
    with pytest.raises(InputError):
        rde.taylor_expand(lambda e, x: jnp.sqrt(jnp.abs(x) + e ** 2)[:, None] * 0 + jnp.abs(e) ** 0.5,
                          X, [0.0])
    with pytest.raises(InputError):
        rde.taylor_expand(lambda e, x: jnp.ones((2, 2)), X, [1.0])
