import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from roughflow import oneform as of
from roughflow.errors import InputError

points = arrays(float, (5, 3), elements=st.floats(-2, 2, allow_nan=False))


def sin_parts(seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 2))
    B = rng.standard_normal((3, 2))
    W = rng.standard_normal((3, 2, 3))
    phi = rng.standard_normal((3, 2))
    return A, B, W, phi


def test_shape_checked_at_construction():
    with pytest.raises(InputError):
        of.OneForm(lambda x: jnp.zeros((2, 2)), 3, 2)
    F = of.rotation()
    with pytest.raises(InputError):
        F(np.zeros((4, 3)))


@given(points)
def test_sin_field_derivatives_match_closed_form(x):
    A, B, W, phi = sin_parts()
    F = of.sin_field(A, B, W, phi)
    arg = np.einsum("ajc,kc->kaj", W, x) + phi
    assert np.allclose(F(x), A + B * np.sin(arg), atol=1e-13)
    d1 = np.einsum("aj,kaj,ajc->kajc", B, np.cos(arg), W)
    assert np.allclose(F.derivative(x, 1), d1, atol=1e-12)
    d2 = -np.einsum("aj,kaj,ajc,ajd->kajcd", B, np.sin(arg), W, W)
    assert np.allclose(F.derivative(x, 2), d2, atol=1e-12)


def test_derivative_tensors_are_symmetric():
    F = of.random_sin_field(3, 2, seed=4)
    pts = np.random.default_rng(0).uniform(-1, 1, (16, 3))
    assert F.symmetry_defect(pts, 2) <= 1e-10
    assert F.symmetry_defect(pts, 3) <= 1e-10
    assert F.symmetry_defect(pts, 1) == 0.0


def test_lip_gamma_estimate_is_finite_and_zero_for_zero():
    assert np.isfinite(of.default_sin_field().lip_gamma_estimate(3.0))
    assert of.zero(2, 2).lip_gamma_estimate(3.0) == 0.0
    # a constant field has only its sup norm
    assert of.constant(np.eye(2)).lip_gamma_estimate(2.5) == pytest.approx(np.sqrt(2))


@pytest.mark.parametrize("n", [1, 31, 33, 512, 700, 1100])
def test_chunked_evaluation_matches_pointwise(n):
    F = of.default_sin_field()
    x = np.random.default_rng(n).standard_normal((n, 2))
    batch = F(x)
    one = np.stack([F(p[None])[0] for p in x[:5]])
    assert batch.shape == (n, 2, 2)
    assert np.array_equal(batch[:5], one)
    assert F(x.reshape(n, 1, 2)).shape == (n, 1, 2, 2)


def test_parametrised_forms_share_kernels():
    fam = of.OneForm(lambda x, p: p[0] * jnp.outer(x, jnp.ones(1)) + p[1], 2, 1, "affine",
                     params=[1.0, 0.0])
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    g = fam.at([2.0, 0.5])
    assert g._kernels is fam._kernels
    assert np.allclose(g(x)[:, :, 0], 2 * x + 0.5)
    assert np.allclose(g.derivative(x)[:, :, 0, :], np.broadcast_to(2 * np.eye(2), (2, 2, 2)))
    with pytest.raises(InputError):
        of.rotation().at(1.0)


def test_arithmetic_and_hstack():
    F, G = of.default_sin_field(), of.random_sin_field(2, 2, seed=3)
    x = np.random.default_rng(1).standard_normal((7, 2))
    assert np.allclose((F + G)(x), F(x) + G(x))
    assert np.allclose((2.5 * F)(x), 2.5 * F(x))
    assert np.allclose((-F)(x), -F(x))
    H = of.hstack(F, of.constant(np.ones((2, 1))))
    assert H.ncols == 3
    assert np.allclose(H(x)[:, :, :2], F(x)) and np.allclose(H(x)[:, :, 2], 1.0)
    with pytest.raises(InputError):
        F + of.zero(1, 1)


def test_builtin_fields():
    x = np.array([[0.3, -0.4]])
    assert np.allclose(of.rotation()(x)[0, :, 0], [0.4, 0.3])
    assert np.allclose(of.scalar_linear(2.0)(np.array([[1.5]])), 3.0)
    with pytest.raises(InputError):
        of.linear(np.zeros((2, 2)))
