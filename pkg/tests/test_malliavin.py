import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughflow import malliavin as ml
from roughflow import oneform as of
from roughflow import rde
from roughflow.errors import InputError
from roughflow.roughpath import Grid, chen_defect, geometric_defect, lift_piecewise_linear, sample_gaussian_driver


def bm(n, dim=2, seed=0):
    grid = Grid.uniform(n)
    return lift_piecewise_linear(sample_gaussian_driver(0.5, dim, grid, seed), grid, 0.45)


def smooth(n):
    grid = Grid.uniform(n)
    t = grid.nodes
    return lift_piecewise_linear(np.column_stack([np.sin(3 * t), np.cos(2 * t)]), grid)


def fd_gamma(F, X, x0, eps=1e-6):
    """Gamma from a finite-difference Jacobian inverted node by node."""
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for e in np.eye(x0.size):
        up = rde.solve_davie(F, X, x0 + eps * e).values
        down = rde.solve_davie(F, X, x0 - eps * e).values
        cols.append((up - down) / (2 * eps))
    U = np.stack(cols, axis=2)
    x = rde.solve_davie(F, X, x0).values
    w = np.linalg.solve(U, F(x))
    integrand = np.einsum("kai,kbi->kab", w, w)
    dt = X.grid.steps[:, None, None]
    return np.sum(0.5 * dt * (integrand[1:] + integrand[:-1]), axis=0)


def test_zero_field_has_zero_covariance():
    assert np.all(ml.malliavin_covariance(of.zero(2, 2), bm(64), [0.3, 0.1]).gamma == 0)


def test_constant_fields_give_identity():
    g = ml.malliavin_covariance(of.constant(np.eye(3)), bm(128, 3, 1), np.zeros(3))
    assert np.max(np.abs(g.gamma - np.eye(3))) <= 1e-10


def test_scalar_linear_gives_one():
    grid = Grid.uniform(2 ** 10)
    X = lift_piecewise_linear(np.sin(grid.nodes), grid)
    g = ml.malliavin_covariance(of.scalar_linear(), X, [1.0])
    assert abs(g.gamma[0, 0] - 1) <= 1e-8


def test_matches_finite_difference_jacobian():
    F = of.default_sin_field()
    X = bm(256, seed=3)
    g = ml.malliavin_covariance(F, X, [0.2, -0.1])
    assert np.max(np.abs(g.gamma - fd_gamma(F, X, [0.2, -0.1]))) < 1e-6


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 3]))
def test_symmetric_and_psd(seed, d):
    F = of.random_sin_field(d, 2, seed=seed)
    g = ml.malliavin_covariance(F, bm(64, 2, seed), np.zeros(d))
    assert g.symmetry_defect <= 1e-12
    assert g.min_eigenvalue >= -1e-10


def test_quadrature_is_stable_under_refinement():
    F = of.default_sin_field()
    gammas = [ml.malliavin_covariance(F, smooth(2 ** k), [0.1, 0.2]).gamma for k in range(6, 12)]
    gaps = [np.max(np.abs(a - b)) for a, b in zip(gammas, gammas[1:])]
    meshes = 2.0 ** -np.arange(6, 11)
    assert np.polyfit(np.log(meshes), np.log(gaps), 1)[0] >= 0.9


def test_rotation_path_examples():
    X = bm(64, 3, 2)
    same = ml.rotation_path(X, lambda s: 0.0, 0.0)
    assert np.allclose(same.x, X.x, atol=1e-15) and np.allclose(same.area, X.area, atol=1e-15)
    R = ml.rotation_path(X, np.pi / 2)
    assert np.allclose(R.x[:, 0], -X.x[:, 1], atol=1e-14) and np.allclose(R.x[:, 1], X.x[:, 0], atol=1e-14)
    assert np.array_equal(R.x[:, 2], X.x[:, 2])
    assert np.allclose(np.linalg.norm(R.x, axis=1), np.linalg.norm(X.x, axis=1), atol=1e-14)
    R = ml.rotation_path(X, 0.7)
    assert chen_defect(R) <= 1e-12 and geometric_defect(R) <= 1e-12
    with pytest.raises(InputError):
        ml.rotation_path(bm(16, 1), 0.3)


def test_givens_is_orthogonal():
    M = ml.givens(1.1, 4)
    assert np.allclose(M @ M.T, np.eye(4), atol=1e-15)
    assert np.linalg.det(M) == pytest.approx(1.0)


def test_brownian_angle():
    w = ml.BrownianAngle([3, 1])
    a0, a1 = w(0.0), w(0.5)
    assert 0 <= a0 < 2 * np.pi
    assert w(0.0) == a0 and w(0.5) == a1
    again = ml.BrownianAngle([3, 1])
    assert (again(0.0), again(0.5)) == (a0, a1)
    with pytest.raises(InputError):
        w(0.25)
    with pytest.raises(InputError):
        w(-1.0)


first = lambda x: x[:, 0]
KW = dict(hurst=0.5, grid_n=32, seed=4)


def test_mc_trivial_cases():
    F = of.default_sin_field()
    ones = lambda x: np.ones(len(x))
    r = ml.ibp_reversibility_mc(F, ones, first, 0.1, 100, **KW)
    assert np.all(r.lhs_terms == 0)
    # -2 c (g(x^s) - g(x^0)) only vanishes in mean
    assert abs(r.rhs_estimate) <= 3 * r.rhs_se
    r = ml.ibp_reversibility_mc(F, first, ones, 0.1, 100, **KW)
    assert np.all(r.lhs_terms == 0) and np.all(r.rhs_terms == 0)
    r = ml.ibp_reversibility_mc(F, first, first, 0.0, 100, **KW)
    assert r.lhs_estimate == 0 and r.rhs_estimate == 0


def test_mc_validation():
    F = of.default_sin_field()
    with pytest.raises(InputError):
        ml.ibp_reversibility_mc(F, first, first, 0.1, 99, **KW)
    with pytest.raises(InputError):
        ml.ibp_reversibility_mc(F, first, first, -0.1, 100, **KW)
    with pytest.raises(InputError):
        ml.ibp_reversibility_mc(of.rotation(), first, first, 0.1, 100, **KW)
    with pytest.raises(InputError):
        ml.ibp_reversibility_mc(F, first, first, 0.1, 100, hurst=0.2)


def test_mc_square_terms_nonnegative_and_se_positive():
    r = ml.ibp_reversibility_mc(of.default_sin_field(), first, first, 0.3, 300, **KW)
    assert np.all(r.lhs_terms >= 0)
    assert r.lhs_se > 0 and r.rhs_se > 0
    assert r.n_samples == 300 and r.n_failed == 0


def test_mc_samples_are_seeded_by_index(monkeypatch):
    F = of.default_sin_field()
    small = ml.ibp_reversibility_mc(F, first, first, 0.2, 100, **KW)
    big = ml.ibp_reversibility_mc(F, first, first, 0.2, 300, **KW)
    assert np.array_equal(big.lhs_terms[:100], small.lhs_terms)
    monkeypatch.setenv("ROUGHFLOW_THREADS", "3")
    threaded = ml.ibp_reversibility_mc(F, first, first, 0.2, 300, **KW)
    assert np.array_equal(threaded.lhs_terms, big.lhs_terms)
    assert threaded.lhs_estimate == big.lhs_estimate and threaded.rhs_estimate == big.rhs_estimate


def test_mc_outputs(tmp_path):
    r = ml.ibp_reversibility_mc(of.default_sin_field(), first, first, 0.2, 100, **KW)
    ml.write_mc_csv(tmp_path / "mc.csv", r)
    lines = (tmp_path / "mc.csv").read_text().splitlines()
    assert lines[0] == "sample_id,lhs_term,rhs_term" and len(lines) == 101
    assert float(lines[1].split(",")[1]) == r.lhs_terms[0]
    ml.write_mc_summary(tmp_path / "mc.json", r)
    summary = json.loads((tmp_path / "mc.json").read_text())
    assert summary["verdict"] in ("pass", "fail")
    assert summary["lhs_estimate"] == r.lhs_estimate and summary["n_samples"] == 100
