import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trusttransfer import kernel as K


def random_kernel(rng, d=6, k=3):
    return K.make_kernel(rng.normal(size=(d, k)) / np.sqrt(d), rng.uniform(0.5, 2.0, size=k))


def test_analytic_one_dimensional():
    kern = K.make_kernel(np.ones((1, 1)))
    assert float(K.evaluate(kern, np.zeros(1), np.ones(1))) == pytest.approx(np.exp(-1), abs=1e-15)
    assert float(K.evaluate(kern, np.ones(1), np.ones(1))) == 1.0


def test_zero_projection():
    kern = K.make_kernel(np.zeros((4, 2)))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(K.project(kern, rng.normal(size=4)), np.zeros(2))
    assert float(K.evaluate(kern, rng.normal(size=4), rng.normal(size=4))) == 1.0


def test_identity_projection():
    kern = K.make_kernel(np.eye(3))
    x = np.array([0.1, -2.0, 3.0])
    np.testing.assert_array_equal(K.project(kern, x), x)


def test_latent_distance_equals_full_metric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        kern = random_kernel(rng)
        x, y = rng.normal(size=6), rng.normal(size=6)
        dz = np.asarray(K.project(kern, x) - K.project(kern, y))
        lat = dz @ np.diag(np.asarray(kern.lengthscales)) @ dz
        full = (x - y) @ np.asarray(K.metric_matrix(kern)) @ (x - y)
        assert lat == pytest.approx(full, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    kern = random_kernel(rng)
    x, y = rng.normal(size=6), rng.normal(size=6)
    a, b = float(K.evaluate(kern, x, y)), float(K.evaluate(kern, y, x))
    assert a == b
    assert 0 < a <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_gram_psd(seed, n):
    rng = np.random.default_rng(seed)
    kern = random_kernel(rng)
    g = np.asarray(K.gram(kern, rng.normal(size=(n, 6))))
    np.testing.assert_array_equal(g, g.T)
    np.testing.assert_array_equal(np.diag(g), np.ones(n))
    assert np.linalg.eigvalsh(g).min() >= -1e-9


def test_gram_duplicates():
    kern = random_kernel(np.random.default_rng(2))
    x = np.ones(6)
    g = np.asarray(K.gram(kern, np.stack([x, x, -x])))
    assert g[0, 1] == 1.0
    np.testing.assert_array_equal(np.asarray(K.gram(kern, x[None])), [[1.0]])


def test_projection_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    proj, ls = rng.normal(size=(5, 3)) / 2, np.ones(3)
    x, y = rng.normal(size=5), rng.normal(size=5)
    f = lambda p: K.evaluate(K.ProjectionKernel(p, ls), x, y)
    g = np.asarray(jax.grad(f)(jnp.asarray(proj)))
    h = 1e-5
    for i in range(5):
        for j in range(3):
            e = np.zeros_like(proj)
            e[i, j] = h
            num = (float(f(proj + e)) - float(f(proj - e))) / (2 * h)
            assert g[i, j] == pytest.approx(num, rel=1e-5, abs=1e-10)


def test_validation():
    with pytest.raises(ValueError, match="exceeds"):
        K.make_kernel(np.ones((2, 3)))
    with pytest.raises(ValueError, match="positive"):
        K.make_kernel(np.ones((3, 2)), [1.0, 0.0])
    with pytest.raises(ValueError, match="dimension"):
        K.project(K.make_kernel(np.ones((3, 2))), np.ones(4))


def test_init_projection_scale():
    p = K.init_projection(np.random.default_rng(0), 400, 50)
    assert p.shape == (400, 50)
    assert p.std() == pytest.approx(1 / 20, rel=0.02)
