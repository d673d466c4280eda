import numpy as np
import pytest

from ringmark import (
    ImaginaryResidualExceeded,
    as_image,
    dft2,
    idft2,
    numerical_rank,
    sample_unit_sphere,
)


def naive_dft2(x):
    """O(N^2) direct summation with orthonormal scaling; the transform oracle."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for i in range(h):
                for j in range(w):
                    acc += x[i, j] * np.exp(-2j * np.pi * (u * i / h + v * j / w))
            out[u, v] = acc
    return out / np.sqrt(h * w)


def hermitian_symmetrize(spec):
    h, w = spec.shape
    out = np.empty_like(spec)
    for i in range(h):
        for j in range(w):
            out[i, j] = 0.5 * (spec[i, j] + np.conj(spec[(h - i) % h, (w - j) % w]))
    return out


class TestDft2:
    def test_constant_image_is_dc_only(self):
        a = 2.5
        spec = dft2(np.full((6, 4), a))
        assert spec[0, 0] == pytest.approx(a * np.sqrt(24))
        spec[0, 0] = 0.0
        assert np.max(np.abs(spec)) < 1e-12

    def test_constant_image_centered_puts_dc_at_center(self):
        spec = dft2(np.full((6, 4), 1.0), centered=True)
        assert abs(spec[3, 2]) == pytest.approx(np.sqrt(24))

    def test_impulse_gives_flat_spectrum(self):
        x = np.zeros((4, 4))
        x[0, 0] = 1.0
        spec = dft2(x)
        assert np.allclose(np.abs(spec), 0.25, atol=1e-14)
        assert np.max(np.abs(spec - naive_dft2(x))) < 1e-12

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 6))
        assert np.max(np.abs(dft2(x) - naive_dft2(x))) < 1e-12

    def test_inverse_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 8))
        back, resid = idft2(dft2(x))
        assert np.max(np.abs(back - x)) < 1e-12
        assert resid < 1e-12

    def test_centered_equals_shifted_uncentered(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 6))
        assert np.array_equal(np.fft.fftshift(dft2(x)), dft2(x, centered=True))

    def test_parseval(self):
        rng = np.random.default_rng(3)
        for shape in [(4, 4), (8, 6), (16, 16)]:
            x = rng.standard_normal(shape)
            assert np.linalg.norm(x) == pytest.approx(
                np.linalg.norm(dft2(x)), abs=1e-10
            )

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            dft2(np.array([[np.nan, 0.0], [0.0, 0.0]]))


class TestIdft2:
    def test_flat_spectrum_gives_impulse(self):
        spec = np.full((4, 4), 0.25, dtype=complex)
        img, _ = idft2(spec)
        expected = np.zeros((4, 4))
        expected[0, 0] = 1.0
        assert np.max(np.abs(img - expected)) < 1e-12

    def test_symmetrized_spectrum_is_real(self):
        rng = np.random.default_rng(4)
        spec = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        img, resid = idft2(hermitian_symmetrize(spec))
        assert resid < 1e-12
        assert img.dtype == np.float64

    def test_asymmetric_spectrum_rejected(self):
        spec = np.zeros((4, 4), dtype=complex)
        spec[1, 1] = 1.0 + 1.0j
        with pytest.raises(ImaginaryResidualExceeded):
            idft2(spec)

    def test_roundtrip_centered(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 8))
        back, _ = idft2(dft2(x, centered=True), centered=True)
        assert np.max(np.abs(back - x)) < 1e-12


class TestSampleUnitSphere:
    def test_unit_norm(self):
        rng = np.random.default_rng(6)
        for d in (2, 3, 17, 64):
            assert np.linalg.norm(sample_unit_sphere(d, rng)) == pytest.approx(
                1.0, abs=1e-12
            )

    def test_low_dimension_rejected(self):
        with pytest.raises(ValueError):
            sample_unit_sphere(1, np.random.default_rng(0))

    def test_coordinate_symmetry(self):
        rng = np.random.default_rng(7)
        n, d = 100_000, 64
        draws = rng.standard_normal((n, d))
        draws /= np.linalg.norm(draws, axis=1, keepdims=True)
        assert np.max(np.abs(draws.mean(axis=0))) < 4 / np.sqrt(n)

    def test_first_coordinate_second_moment(self):
        # E[u_1^2] = 1/d for the uniform sphere distribution.
        rng = np.random.default_rng(8)
        n, d = 100_000, 64
        draws = rng.standard_normal((n, d))
        draws /= np.linalg.norm(draws, axis=1, keepdims=True)
        assert abs(np.mean(draws[:, 0] ** 2) - 1 / d) < 5e-3


class TestNumericalRank:
    def test_identity(self):
        info = numerical_rank(np.eye(8), 1e-6)
        assert info == (8, 1.0, pytest.approx(1.0))

    def test_rank_three_construction(self):
        rng = np.random.default_rng(9)
        d = 16
        m = np.zeros((d, d))
        for _ in range(3):
            u = rng.standard_normal(d)
            v = rng.standard_normal(d)
            m += np.outer(u, v)
        rank, ratio, smax = numerical_rank(m, 1e-6)
        assert rank == 3
        assert ratio == pytest.approx(3 / 16)
        assert smax == pytest.approx(np.linalg.svd(m, compute_uv=False)[0])

    def test_zero_matrix(self):
        assert numerical_rank(np.zeros((5, 5))) == (0, 0.0, 0.0)

    def test_orthogonal_conjugation_invariance(self):
        rng = np.random.default_rng(10)
        d = 12
        m = rng.standard_normal((d, 4)) @ rng.standard_normal((4, d))
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        assert numerical_rank(m, 1e-6).rank == numerical_rank(q @ m @ q.T, 1e-6).rank

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            numerical_rank(np.eye(3), 1.5)
        with pytest.raises(ValueError):
            numerical_rank(np.ones((2, 3)))


class TestAsImage:
    def test_odd_dimensions_rejected(self):
        with pytest.raises(ValueError):
            as_image(np.zeros((1, 5, 4)))

    def test_non_finite_rejected(self):
        bad = np.zeros((1, 4, 4))
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            as_image(bad)

    def test_accepts_and_casts(self):
        out = as_image(np.zeros((2, 4, 6), dtype=np.float32))
        assert out.dtype == np.float64
