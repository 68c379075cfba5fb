import numpy as np
import pytest
from scipy import integrate

from dppbounds.kernel import (
    DimensionError,
    GaussianBaseMeasure,
    KernelParams,
    base_log_density,
    cross_gram,
    eps_to_sigma,
    eval_kernel,
    gram,
    psi_matrix,
    sigma_to_eps,
    trace_operator,
)


def psi_by_quadrature(params, base, zi, zj):
    """Adaptive quadrature of int L(zi, x) L(x, zj) dmu(x) on a separable product."""
    total = params.amplitude**2 * base.intensity
    for d in range(params.dim):
        s, m, r = params.sigma[d], base.mu[d], base.rho[d]

        def f(x):
            dens = np.exp(-0.5 * ((x - m) / r) ** 2) / (r * np.sqrt(2 * np.pi))
            return np.exp(-((zi[d] - x) ** 2 + (x - zj[d]) ** 2) / (2 * s**2)) * dens

        val, _ = integrate.quad(f, m - 12 * r, m + 12 * r, epsabs=0, epsrel=1e-12, limit=400,
                                points=sorted({zi[d], zj[d], m}))
        total *= val
    return total


class TestEvalKernel:
    def test_zero_distance(self):
        p = KernelParams((0.37,))
        assert eval_kernel(p, 1.5, 1.5) == 1.0

    def test_eps_form(self):
        p = KernelParams.from_eps(1.0)
        assert eval_kernel(p, 0.0, 1.0) == pytest.approx(np.exp(-1.0), rel=1e-15)

    def test_anisotropic_amplitude(self):
        p = KernelParams((1.0, 2.0), amplitude=2.0)
        assert eval_kernel(p, [0, 0], [1, 2]) == pytest.approx(2 * np.exp(-1.0), rel=1e-15)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        p = KernelParams((0.3, 0.8), 1.7)
        for _ in range(50):
            x, y = rng.normal(size=(2, 2))
            assert eval_kernel(p, x, y) == eval_kernel(p, y, x)
            assert 0 < eval_kernel(p, x, y) <= 1.7

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            eval_kernel(KernelParams((1.0, 1.0)), [0.0], [1.0])


class TestGram:
    def test_empty(self):
        assert gram(KernelParams((1.0,)), np.zeros((0, 1))).shape == (0, 0)

    def test_two_points(self):
        K = gram(KernelParams.from_eps(1.0), [0.0, 1.0])
        np.testing.assert_allclose(K, [[1, np.exp(-1)], [np.exp(-1), 1]], rtol=1e-15)

    @pytest.mark.parametrize("n", [5, 20, 50])
    def test_psd_and_diagonal(self, n):
        rng = np.random.default_rng(n)
        p = KernelParams((0.4, 0.9), amplitude=3.0)
        K = gram(p, rng.normal(size=(n, 2)))
        np.testing.assert_array_equal(np.diag(K), 3.0)
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * 3.0

    def test_cross_gram_transpose_and_loop(self):
        rng = np.random.default_rng(1)
        p = KernelParams((0.5, 1.5))
        X, Z = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
        C = cross_gram(p, X, Z)
        np.testing.assert_array_equal(C, cross_gram(p, Z, X).T)
        loop = np.array([[eval_kernel(p, x, z) for z in Z] for x in X])
        np.testing.assert_allclose(C, loop, rtol=1e-14)

    def test_cross_gram_equals_gram(self):
        X = np.random.default_rng(2).normal(size=(10, 1))
        p = KernelParams((0.6,))
        np.testing.assert_allclose(cross_gram(p, X, X), gram(p, X), rtol=1e-14)

    def test_eps_sigma_round_trip(self):
        for eps in (1e-3, 0.5, 1.0, 7.3):
            assert sigma_to_eps(eps_to_sigma(eps)) == pytest.approx(eps, rel=1e-15)
        # moderate exponents: exp(-t) carries a relative rounding of about t * 1e-16
        X = np.random.default_rng(3).uniform(-1, 1, size=(15, 1))
        K_eps = np.exp(-(2.0**2) * (X - X.T) ** 2)
        np.testing.assert_allclose(gram(KernelParams.from_eps(2.0), X), K_eps, rtol=1e-14)


class TestPsi:
    def test_unit_case(self):
        p = KernelParams((1.0,))
        b = GaussianBaseMeasure(1.0, (0.0,), (1.0,))
        assert psi_matrix(p, b, [0.0])[0, 0] == pytest.approx(1 / np.sqrt(3), rel=1e-14)
        assert psi_by_quadrature(p, b, [0.0], [0.0]) == pytest.approx(1 / np.sqrt(3), rel=1e-10)

    def test_linear_in_kappa_quadratic_in_amplitude(self):
        Z = np.random.default_rng(4).normal(size=(6, 2))
        b = GaussianBaseMeasure(1.0, (0.1, -0.2), (0.8, 1.3))
        p1 = KernelParams((0.5, 0.7))
        p3 = KernelParams((0.5, 0.7), amplitude=3.0)
        P = psi_matrix(p1, b, Z)
        np.testing.assert_allclose(psi_matrix(p1, b.with_intensity(7.5), Z), 7.5 * P, rtol=1e-14)
        np.testing.assert_allclose(psi_matrix(p3, b, Z), 9.0 * P, rtol=1e-14)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_quadrature(self, dim):
        rng = np.random.default_rng(10 + dim)
        for _ in range(10):
            p = KernelParams(tuple(rng.uniform(0.2, 2.0, dim)), rng.uniform(0.5, 2))
            b = GaussianBaseMeasure(rng.uniform(0.5, 50), tuple(rng.normal(size=dim)), tuple(rng.uniform(0.3, 2, dim)))
            zi, zj = rng.normal(scale=1.5, size=(2, dim))
            got = psi_matrix(p, b, np.stack([zi, zj]))[0, 1]
            assert got == pytest.approx(psi_by_quadrature(p, b, zi, zj), rel=1e-6)

    def test_psd(self):
        Z = np.linspace(-3, 3, 40)
        P = psi_matrix(KernelParams((0.3,)), GaussianBaseMeasure(5.0, (0.0,), (1.0,)), Z)
        assert np.linalg.eigvalsh(P).min() >= -1e-12 * P.max()


class TestTraceAndDensity:
    @pytest.mark.parametrize("a,kappa,expected", [(1.0, 1000.0, 1000.0), (2.0, 3.0, 6.0), (1.3, 0.0, 0.0)])
    def test_trace(self, a, kappa, expected):
        assert trace_operator(KernelParams((1.0,), a), GaussianBaseMeasure(kappa, (0.0,), (1.0,))) == expected

    def test_standard_normal(self):
        b = GaussianBaseMeasure(1.0, (0.0,), (1.0,))
        assert base_log_density(b, 0.0) == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-15)
        assert base_log_density(b.with_intensity(np.e), 0.0) == pytest.approx(1 - 0.5 * np.log(2 * np.pi))

    def test_separable(self):
        b2 = GaussianBaseMeasure(1.0, (0.5, -1.0), (2.0, 0.3))
        bx = GaussianBaseMeasure(1.0, (0.5,), (2.0,))
        by = GaussianBaseMeasure(1.0, (-1.0,), (0.3,))
        x = np.array([0.2, -0.7])
        assert base_log_density(b2, x) == pytest.approx(base_log_density(bx, x[0]) + base_log_density(by, x[1]))

    def test_alpha_conventions(self):
        assert GaussianBaseMeasure.from_kappa_alpha(10, 0.5).scales == (1.0,)
        assert GaussianBaseMeasure.from_kappa_alpha(10, 0.5, "fasshauer").scales[0] == pytest.approx(np.sqrt(2))
        with pytest.raises(ValueError):
            GaussianBaseMeasure.from_kappa_alpha(10, 0.5, "other")

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            KernelParams((0.0,))
        with pytest.raises(ValueError):
            KernelParams((1.0,), amplitude=-1)
        with pytest.raises(ValueError):
            GaussianBaseMeasure(-1.0, (0.0,), (1.0,))
