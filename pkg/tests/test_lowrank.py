import numpy as np
import pytest

from dppbounds.kernel import GaussianBaseMeasure, KernelParams, NumericError, cross_gram, gram
from dppbounds.lowrank import (
    BoundPair,
    BoundSubject,
    FactorizationError,
    InducingSet,
    bound_gap,
    continuous_lower_grad,
    continuous_terms,
    factorize,
    jittered_cholesky,
    neg_logdet_bounds_continuous,
    neg_logdet_bounds_finite,
)
from dppbounds.oracle import GGSpectrum, fredholm_det_gg, fredholm_det_quadrature


def exact_neg_logdet(L):
    return -float(np.sum(np.log1p(np.clip(np.linalg.eigvalsh(L), 0, None))))


def random_instance(rng, n=None, m=None, dim=None):
    n = n or int(rng.integers(2, 51))
    m = m or int(rng.integers(1, n + 1))
    dim = dim or int(rng.integers(1, 3))
    params = KernelParams(tuple(rng.uniform(0.1, 2.0, dim)), float(rng.uniform(0.2, 5.0)))
    X = rng.uniform(-2, 2, size=(n, dim))
    Z = rng.uniform(-2, 2, size=(m, dim))
    return params, X, Z


class TestBoundPair:
    def test_rejects_inverted(self):
        with pytest.raises(NumericError):
            BoundPair(1.0, 0.0, BoundSubject.LOG_LIKELIHOOD)

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            BoundPair(-np.inf, 0.0, BoundSubject.LOG_LIKELIHOOD)

    def test_arithmetic(self):
        b = BoundPair(-2.0, 1.0, BoundSubject.NEG_LOGDET_FINITE)
        assert b.gap == 3.0 and b.midpoint == -0.5
        assert b.shift(1.0).lower == -1.0
        s = b.scale(-2.0)
        assert (s.lower, s.upper) == (-2.0, 4.0)
        i = b.intersect(BoundPair(-1.0, 5.0, BoundSubject.NEG_LOGDET_FINITE))
        assert (i.lower, i.upper) == (-1.0, 1.0)


class TestInducingSet:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            InducingSet([[0.0], [1.0], [0.0]])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            InducingSet(np.zeros((0, 1)))

    def test_read_only(self):
        Z = InducingSet([[0.0, 1.0], [1.0, 0.0]])
        assert Z.m == 2 and Z.dim == 2
        with pytest.raises(ValueError):
            Z.Z[0, 0] = 3.0


class TestJitter:
    def test_escalates_on_singular(self):
        K = np.ones((5, 5))
        C, absj = jittered_cholesky(K, jitter=0.0)
        assert absj > 0
        np.testing.assert_allclose(C @ C.T, K + absj * np.eye(5), atol=1e-12)

    def test_fails_past_cap(self):
        K = -np.eye(3)
        with pytest.raises(FactorizationError) as info:
            jittered_cholesky(K)
        assert info.value.jitter == pytest.approx(1e-4)


class TestFactorize:
    def test_saturated(self):
        rng = np.random.default_rng(0)
        p = KernelParams((0.5,))
        X = rng.normal(size=(12, 1))
        f = factorize(p, X, X)
        assert f.trace_L - f.trace_Q <= 1e-8 * f.trace_L

    def test_rank_one(self):
        rng = np.random.default_rng(1)
        p = KernelParams((0.7, 0.4), amplitude=2.5)
        X, z = rng.normal(size=(8, 2)), rng.normal(size=(1, 2))
        k = cross_gram(p, X, z)[:, 0]
        np.testing.assert_allclose(factorize(p, X, z).Q(), np.outer(k, k) / 2.5, rtol=1e-8)

    def test_matches_dense(self):
        rng = np.random.default_rng(2)
        p = KernelParams((0.8, 1.1))
        X, Z = rng.normal(size=(30, 2)), rng.normal(size=(5, 2))
        Kxz = cross_gram(p, X, Z)
        dense = Kxz @ np.linalg.solve(gram(p, Z), Kxz.T)
        np.testing.assert_allclose(factorize(p, X, Z).Q(), dense, atol=1e-8)


class TestFiniteBounds:
    def test_hand_example(self):
        # two far-apart items, so L is the identity; Z = {x_1} explains only the first
        p = KernelParams((1e-3,))
        X = np.array([[0.0], [1.0]])
        b = neg_logdet_bounds_finite(factorize(p, X, X[:1]))
        # the starting jitter of 1e-10 on L_Z shifts both sides by about that much
        assert b.upper == pytest.approx(-np.log(2.0), abs=1e-9)
        assert b.lower == pytest.approx(-np.log(2.0) - 1.0, abs=1e-9)

    def test_saturated_is_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p, X, _ = random_instance(rng, n=20)
            b = neg_logdet_bounds_finite(factorize(p, X, X))
            assert b.gap <= 1e-8
            assert b.upper == pytest.approx(exact_neg_logdet(gram(p, X)), abs=1e-8)

    def test_sandwich(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p, X, Z = random_instance(rng)
            b = neg_logdet_bounds_finite(factorize(p, X, Z))
            assert b.contains(exact_neg_logdet(gram(p, X)), slack=1e-9 * len(X))
            assert b.subject is BoundSubject.NEG_LOGDET_FINITE

    def test_nested_refinement(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p, X, Z = random_instance(rng, n=40, m=12)
            small = neg_logdet_bounds_finite(factorize(p, X, Z[:6]))
            big = neg_logdet_bounds_finite(factorize(p, X, Z))
            assert big.upper <= small.upper + 1e-12
            assert big.lower >= small.lower - 1e-12
            assert bound_gap(factorize(p, X, Z)) <= bound_gap(factorize(p, X, Z[:6])) + 1e-12

    def test_gap_nonnegative_and_consistent(self):
        rng = np.random.default_rng(6)
        p, X, Z = random_instance(rng, n=30, m=4)
        f = factorize(p, X, Z)
        assert f.trace_L - f.trace_Q >= -1e-10 * f.trace_L
        assert bound_gap(f) == pytest.approx(neg_logdet_bounds_finite(f).gap, abs=1e-12)


class TestContinuousBounds:
    def test_zero_intensity(self):
        b = neg_logdet_bounds_continuous(KernelParams((1.0,)), GaussianBaseMeasure(0.0, (0.0,), (1.0,)), [[0.0]])
        assert (b.lower, b.upper) == (0.0, 0.0)

    @pytest.mark.parametrize("psi", ["quadrature", "analytic"])
    def test_single_point_at_mean(self, psi):
        p = KernelParams.from_eps(1.0)
        base = GaussianBaseMeasure.from_kappa_alpha(5.0, 0.5)
        b = neg_logdet_bounds_continuous(p, base, [[0.0]], psi=psi)
        # m = 1, z = mean: u = -log(1 + Psi/a), gap = kappa - Psi/a
        psi_val = 5.0 / np.sqrt(1 + 2 * 1.0**2 / 0.5)
        assert b.upper == pytest.approx(-np.log1p(psi_val), rel=1e-10)
        assert b.gap == pytest.approx(5.0 - psi_val, rel=1e-8)
        assert b.contains(-fredholm_det_quadrature(p, base))

    @pytest.mark.parametrize("m", [5, 20, 80])
    def test_contains_oracle(self, m):
        rng = np.random.default_rng(m)
        for _ in range(5):
            kappa = rng.uniform(200, 2000)
            alpha, eps = np.exp(rng.uniform(np.log(0.2), np.log(2.0), 2))
            p = KernelParams.from_eps(eps)
            base = GaussianBaseMeasure.from_kappa_alpha(kappa, alpha)
            Z = np.sort(rng.normal(scale=base.scales[0], size=(m, 1)), axis=0)
            b = neg_logdet_bounds_continuous(p, base, Z)
            assert b.contains(-fredholm_det_gg(GGSpectrum(p, base)), slack=1e-9 * kappa)

    def test_gap_nonnegative(self):
        p = KernelParams((0.4, 0.6))
        base = GaussianBaseMeasure(30.0, (0.0, 0.0), (1.0, 1.0))
        Z = np.random.default_rng(7).normal(size=(25, 2))
        t = continuous_terms(p, base, Z)
        assert t.trace_op - t.trace_q >= -1e-10 * t.trace_op
        assert bound_gap(p, base, Z) == pytest.approx(t.gap)

    def test_quadrature_and_analytic_agree(self):
        p = KernelParams((0.5,))
        base = GaussianBaseMeasure(40.0, (0.3,), (1.2,))
        Z = np.linspace(-2, 2, 9)[:, None]
        a = neg_logdet_bounds_continuous(p, base, Z, psi="analytic")
        q = neg_logdet_bounds_continuous(p, base, Z, psi="quadrature")
        assert a.upper == pytest.approx(q.upper, rel=1e-9)
        assert a.lower == pytest.approx(q.lower, rel=1e-9)

    def test_bad_psi_method(self):
        with pytest.raises(ValueError):
            continuous_terms(KernelParams((1.0,)), GaussianBaseMeasure(1.0, (0.0,), (1.0,)), [[0.0]], psi="nope")


class TestGradient:
    @pytest.mark.parametrize("psi", ["quadrature", "analytic"])
    @pytest.mark.parametrize("dim", [1, 2])
    def test_against_central_differences(self, psi, dim):
        rng = np.random.default_rng(dim)
        sig = rng.uniform(0.4, 0.9, dim)
        rho = rng.uniform(0.8, 1.5, dim)
        mu = rng.normal(size=dim)
        Z = rng.normal(size=(6, dim))

        def lower(log_kappa, log_sig, log_rho, mean, Zc):
            base = GaussianBaseMeasure(float(np.exp(log_kappa)), tuple(mean), tuple(np.exp(log_rho)))
            p = KernelParams(tuple(np.exp(log_sig)))
            return continuous_terms(p, base, Zc, psi=psi, n_nodes=200 if dim == 1 else 60).lower

        args = [np.log(20.0), np.log(sig), np.log(rho), mu, Z]
        base = GaussianBaseMeasure(20.0, tuple(mu), tuple(rho))
        p = KernelParams(tuple(sig))
        # the gradient routine picks its own node count; compare on a fixed one
        from dppbounds import lowrank

        orig = lowrank.nodes_for
        lowrank.nodes_for = lambda *_: [200] * dim if dim == 1 else [60] * dim
        try:
            val, _, gZ, g = continuous_lower_grad(p, base, Z, psi=psi)
        finally:
            lowrank.nodes_for = orig
        assert val == pytest.approx(lower(*args), rel=1e-12)
        # L_Z has condition number near 1e5 here, so a smaller step is swamped by rounding
        h = 1e-4
        fd_k = (lower(args[0] + h, *args[1:]) - lower(args[0] - h, *args[1:])) / (2 * h)
        assert g["log_kappa"] == pytest.approx(fd_k, rel=1e-5, abs=1e-6)
        for key, idx in (("log_sigma", 1), ("log_rho", 2), ("mean", 3)):
            for d in range(dim):
                up = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
                dn = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
                up[idx][d] += h
                dn[idx][d] -= h
                assert g[key][d] == pytest.approx((lower(*up) - lower(*dn)) / (2 * h), rel=1e-5, abs=1e-6)
        for i in range(Z.shape[0]):
            for d in range(dim):
                Zu, Zd = Z.copy(), Z.copy()
                Zu[i, d] += h
                Zd[i, d] -= h
                fd = (lower(*args[:4], Zu) - lower(*args[:4], Zd)) / (2 * h)
                assert gZ[i, d] == pytest.approx(fd, rel=1e-5, abs=1e-6)
