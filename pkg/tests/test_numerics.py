import numpy as np
import pytest
from scipy.linalg import circulant

from numerics import as_vec, derive_seed, fft_circular_convolve, make_rng, randn, spectral_norm


def test_make_rng_is_reproducible():
    a = make_rng(42).standard_normal(5)
    b = make_rng(42).standard_normal(5)
    assert np.array_equal(a, b)


def test_derive_seed_stable_and_keyed():
    assert derive_seed(7, "plant", 3) == derive_seed(7, "plant", 3)
    assert derive_seed(7, "plant", 3) != derive_seed(7, "plant", 4)
    assert derive_seed(7, "plant") != derive_seed(7, "noise")
    assert derive_seed(7, "plant") != derive_seed(8, "plant")


def test_randn_scales_and_validates():
    x = randn(make_rng(0), 1000, sigma=0.0)
    assert x.shape == (1000,)
    assert not np.any(x)
    with pytest.raises(ValueError):
        randn(make_rng(0), 0)
    with pytest.raises(ValueError):
        randn(make_rng(0), 3, sigma=-1.0)


@pytest.mark.parametrize("sigma", [1.0, 2.5])
def test_randn_moments(sigma):
    x = randn(make_rng(3), 100_000, sigma=sigma)
    assert abs(x.mean()) < 0.02 * sigma
    assert abs(x.var() / sigma ** 2 - 1.0) < 0.05


def test_as_vec_rejects_bad_shapes_and_nan():
    assert as_vec([1, 2, 3]).dtype == np.float64
    with pytest.raises(ValueError):
        as_vec([[1.0, 2.0]])
    with pytest.raises(ValueError):
        as_vec([1.0, np.nan])


@pytest.mark.parametrize("n", [1, 2, 3, 8, 17, 64])
def test_fft_circular_convolve_matches_dense(n):
    rng = make_rng(n)
    g, x = rng.standard_normal(n), rng.standard_normal(n)
    expected = circulant(g) @ x
    assert np.allclose(fft_circular_convolve(g, x), expected, rtol=1e-10, atol=1e-12)


def test_fft_circular_convolve_dim_mismatch():
    with pytest.raises(ValueError):
        fft_circular_convolve(np.ones(3), np.ones(4))


class TestSpectralNorm:
    def test_matches_svd(self):
        w = make_rng(3).standard_normal((12, 7))
        est, converged = spectral_norm(w)
        assert converged
        assert est == pytest.approx(np.linalg.norm(w, 2), rel=1e-6)

    def test_never_exceeds_true_value(self):
        w = make_rng(4).standard_normal((5, 9))
        est, _ = spectral_norm(w, iters=3)
        assert est <= np.linalg.norm(w, 2) * (1 + 1e-12)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((3, 4))) == (0.0, True)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            spectral_norm(np.ones(3))
        with pytest.raises(ValueError):
            spectral_norm(np.ones((2, 2)), iters=0)
