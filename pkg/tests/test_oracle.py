import numpy as np
import pytest
from scipy import stats

from dppbounds.kernel import GaussianBaseMeasure, KernelParams, gram
from dppbounds.oracle import (
    FiniteDPPSampler,
    GGSpectrum,
    OracleError,
    calibrated_spectrum,
    eigen_residual,
    fredholm_det_gg,
    fredholm_det_quadrature,
    gg_eigenpairs,
    orthonormality_error,
    sample_dpp_continuous_gg,
)


def hermite_eigenvalues(kappa, alpha, eps, n):
    """Textbook eigenvalues for exp(-eps^2 (x-y)^2) under density proportional to exp(-alpha^2 x^2)."""
    d2 = 0.5 * alpha**2 * (np.sqrt(1 + (2 * eps / alpha) ** 2) - 1)
    s = alpha**2 + d2 + eps**2
    return kappa * np.sqrt(alpha**2 / s) * (eps**2 / s) ** np.arange(n)


class TestSpectrum:
    @pytest.mark.parametrize("alpha,eps", [(0.5, 1.0), (1.0, 0.3), (0.25, 2.0)])
    def test_closed_form(self, alpha, eps):
        spec = gg_eigenpairs(7.0, alpha, eps, convention="fasshauer")
        np.testing.assert_allclose(spec.eigenvalues[:15], hermite_eigenvalues(7.0, alpha, eps, 15), rtol=1e-12)

    def test_trace_matches_kappa(self):
        spec = gg_eigenpairs(500.0, 0.5, 1.0)
        assert spec.trace() == pytest.approx(500.0, rel=1e-12)

    def test_eigenfunctions(self):
        spec = gg_eigenpairs(10.0, 0.7, 1.3)
        assert eigen_residual(spec) < 1e-10
        assert orthonormality_error(spec) < 1e-10
        calibrated_spectrum(spec.params, spec.base)

    def test_separable_2d(self):
        base = GaussianBaseMeasure(20.0, (0.0, 1.0), (1.0, 0.5))
        p = KernelParams((0.8, 0.4))
        spec = GGSpectrum(p, base)
        ax = [GGSpectrum(KernelParams((s,)), GaussianBaseMeasure(1.0, (m,), (r,)))
              for s, m, r in zip(p.lengthscales, base.means, base.scales)]
        assert spec.eigenvalues[0] == pytest.approx(20.0 * ax[0].eigenvalues[0] * ax[1].eigenvalues[0], rel=1e-12)
        assert spec.trace() == pytest.approx(20.0, rel=1e-10)
        assert eigen_residual(spec) < 1e-8

    def test_zero_intensity(self):
        spec = gg_eigenpairs(1.0, 0.5, 1.0)
        empty = GGSpectrum(spec.params, spec.base.with_intensity(0.0))
        assert empty.n_trunc == 0 and fredholm_det_gg(empty) == 0.0

    def test_mode_guard(self):
        with pytest.raises(OracleError):
            GGSpectrum(KernelParams((1e-3, 1e-3)), GaussianBaseMeasure(1.0, (0.0, 0.0), (10.0, 10.0)))

    def test_expected_count_and_marginal(self):
        spec = gg_eigenpairs(1000.0, 0.5, 1.0)
        x = np.linspace(-12, 12, 4001)
        integral = np.trapezoid(spec.single_point_marginal(x[:, None]), x)
        assert integral == pytest.approx(spec.expected_count(), rel=1e-8)


class TestFredholm:
    @pytest.mark.parametrize("kappa,alpha,eps", [(200, 0.25, 0.5), (1000, 0.5, 1.0), (2000, 1.0, 2.0)])
    def test_quadrature_agrees(self, kappa, alpha, eps):
        spec = gg_eigenpairs(kappa, alpha, eps)
        exact = fredholm_det_gg(spec)
        assert fredholm_det_quadrature(spec.params, spec.base) == pytest.approx(exact, rel=1e-6)

    def test_small_kappa_expansion(self):
        # log det(I + L) = tr L - tr L^2 / 2 + O(kappa^3)
        spec = gg_eigenpairs(1e-4, 0.5, 1.0)
        lam = spec.eigenvalues
        assert fredholm_det_gg(spec) == pytest.approx(lam.sum() - 0.5 * (lam**2).sum(), rel=1e-8)


class TestSamplers:
    def test_finite_marginals(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(6, 1))
        L = gram(KernelParams((0.5,), 1.5), X)
        K = L @ np.linalg.inv(np.eye(6) + L)
        sampler = FiniteDPPSampler(L)
        hits = np.zeros(6)
        n = 20000
        for _ in range(n):
            hits[sampler.sample(rng)] += 1
        np.testing.assert_allclose(hits / n, np.diag(K), atol=5 * np.sqrt(0.25 / n))

    def test_finite_samples_distinct_sorted(self):
        rng = np.random.default_rng(1)
        L = gram(KernelParams((0.2,), 5.0), np.linspace(0, 3, 15))
        for _ in range(50):
            s = FiniteDPPSampler(L).sample(rng)
            assert np.all(np.diff(s) > 0)

    def test_continuous_count(self):
        # the number of points is a sum of independent Bernoullis with means lam/(1+lam)
        spec = gg_eigenpairs(50.0, 0.5, 1.0)
        rng = np.random.default_rng(2)
        counts = np.array([len(sample_dpp_continuous_gg(spec, rng)) for _ in range(300)])
        lam = spec.eigenvalues
        mean, var = spec.expected_count(), float(np.sum(lam / (1 + lam) ** 2))
        assert abs(counts.mean() - mean) < 4 * np.sqrt(var / len(counts))

    def test_continuous_locations(self):
        # pooled points follow the normalised first-order intensity
        spec = gg_eigenpairs(30.0, 0.5, 1.0)
        rng = np.random.default_rng(3)
        pts = np.concatenate([sample_dpp_continuous_gg(spec, rng)[:, 0] for _ in range(200)])
        grid = np.linspace(-10, 10, 8001)
        dens = spec.single_point_marginal(grid[:, None])
        cdf = np.cumsum(dens)
        cdf /= cdf[-1]
        res = stats.kstest(pts, lambda x: np.interp(x, grid, cdf))
        assert res.pvalue > 1e-3
