import numpy as np
import pytest
from scipy import stats

from dppbounds.kernel import KernelParams, gram
from dppbounds.likelihood import LOG_ZERO, Dataset, GroundSet
from dppbounds.lowrank import BoundPair, BoundSubject
from dppbounds.mcmc import (
    ChainState,
    FiniteTarget,
    FlatTarget,
    MCMCConfig,
    PriorBox,
    adapt_proposal,
    retrospective_accept,
    run_mh,
)
from dppbounds.oracle import sample_dpp_finite


class ShrinkingTarget:
    """Standard normal log-likelihood, bracketed by +-width * 2^-m around the truth."""

    def __init__(self, width=8.0):
        self.width = width
        self.calls = 0

    def inducing(self, theta, m):
        return m

    def bounds_at(self, theta, m):
        self.calls += 1
        v = self.exact(theta)
        w = self.width * 2.0**-m
        return BoundPair(v - w, v + w, BoundSubject.LOG_LIKELIHOOD)

    def exact(self, theta):
        return float(-0.5 * np.sum(np.asarray(theta) ** 2))


BOX = PriorBox(("x",), (-20.0,), (20.0,))


class TestPrior:
    def test_toy_box(self):
        prior = PriorBox.gaussian_toy()
        inside = np.array([np.log(1000.0), 0.0, 0.0])
        # uniform on kappa, so the density in log kappa carries the Jacobian kappa
        assert prior.log_density(inside) == pytest.approx(
            -np.log(1800.0) - 2 * np.log(20.0) + np.log(1000.0))
        assert prior.log_density([np.log(100.0), 0.0, 0.0]) == LOG_ZERO
        assert prior.log_density([np.log(1000.0), 11.0, 0.0]) == LOG_ZERO

    def test_samples_inside(self):
        prior = PriorBox.gaussian_toy()
        S = prior.sample(np.random.default_rng(0), 200)
        assert all(prior.contains(s) for s in S)

    def test_validation(self):
        with pytest.raises(ValueError):
            PriorBox(("a",), (1.0,), (0.0,))
        with pytest.raises(ValueError):
            PriorBox(("a",), (0.0,), (1.0,), (True,))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"m_max": 5}, {"target_accept": 1.0}, {"burn_in": 20, "n_iters": 10},
                                    {"m_step": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MCMCConfig(**kw)


class TestRetrospectiveDecision:
    def test_matches_exact_decision(self):
        target = ShrinkingTarget()
        cfg = MCMCConfig(m0=1, m_step=1, m_max=60)
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = rng.normal(size=2)
            u = rng.uniform()
            cur = ChainState(np.array([a]), 1, log_prior=BOX.log_density([a]))
            prop = ChainState(np.array([b]), 1, log_prior=BOX.log_density([b]))
            d = retrospective_accept(cur, prop, u, target, BOX, cfg)
            assert not d.fallback
            assert d.accepted == (np.log(u) < target.exact([b]) - target.exact([a]))
            assert d.lower <= target.exact([b]) - target.exact([a]) <= d.upper
            # widths only shrink as the sets grow
            assert np.all(np.diff(d.widths) <= 1e-12)

    def test_fallback_at_cap(self):
        cfg = MCMCConfig(m0=1, m_step=1, m_max=2)
        cur = ChainState(np.array([0.0]), 1, log_prior=BOX.log_density([0.0]))
        prop = ChainState(np.array([0.0]), 1, log_prior=BOX.log_density([0.0]))
        d = retrospective_accept(cur, prop, 0.9, ShrinkingTarget(), BOX, cfg)
        assert d.fallback and d.accepted == (np.log(0.9) < 0.5 * (d.lower + d.upper))
        assert cur.m == prop.m == 2

    def test_outside_prior_rejected_without_evaluation(self):
        target = ShrinkingTarget()
        cur = ChainState(np.array([0.0]), 1, log_prior=BOX.log_density([0.0]))
        prop = ChainState(np.array([50.0]), 1, log_prior=BOX.log_density([50.0]))
        d = retrospective_accept(cur, prop, 0.5, target, BOX, MCMCConfig())
        assert not d.accepted and target.calls == 0


class TestChain:
    def test_flat_target_samples_prior(self):
        prior = PriorBox(("a", "b"), (0.0, 1.0), (1.0, 5.0), (False, True))
        tr = run_mh(FlatTarget(), prior, MCMCConfig(n_iters=20000, burn_in=2000, seed=3), [0.5, 0.0])
        post = tr.posterior()
        assert stats.kstest(post[::20, 0], "uniform").pvalue > 1e-3
        assert stats.kstest(np.exp(post[::20, 1]), "uniform", args=(1.0, 4.0)).pvalue > 1e-3

    def test_normal_target_and_adaptation(self):
        tr = run_mh(ShrinkingTarget(), BOX, MCMCConfig(n_iters=20000, burn_in=2000, m0=1, m_step=1,
                                                      m_max=60, seed=1), [0.0], mode="retrospective")
        post = tr.posterior()[:, 0]
        assert abs(post.mean()) < 0.1 and abs(post.std() - 1) < 0.1
        assert abs(tr.acceptance_rate() - 0.25) < 0.05
        assert tr.n_fallback == 0

    def test_retrospective_equals_ideal_chain(self):
        rng = np.random.default_rng(5)
        ground = GroundSet(rng.uniform(-1, 1, size=(25, 1)))
        L = gram(KernelParams((0.2,), 2.0), ground.items)
        data = Dataset([sample_dpp_finite(L, rng) for _ in range(3)], ground=ground)
        prior = PriorBox(("log_sigma", "log_amp"), (-5.0, -5.0), (3.0, 3.0))
        cfg = MCMCConfig(n_iters=300, burn_in=50, m0=3, m_step=3, m_max=25, check_exact=True, seed=2)
        target = FiniteTarget(data)
        theta0 = [np.log(0.2), np.log(2.0)]
        a = run_mh(target, prior, cfg, theta0, mode="retrospective")
        b = run_mh(target, prior, cfg, theta0, mode="ideal")
        assert a.mismatches() == 0 and a.n_fallback == 0
        np.testing.assert_array_equal(a.accepted, b.accepted)
        np.testing.assert_allclose(a.theta, b.theta)
        assert a.max_m <= 25

    def test_bad_start(self):
        with pytest.raises(ValueError):
            run_mh(FlatTarget(), BOX, MCMCConfig(n_iters=10, burn_in=0), [30.0])

    def test_csv_schema(self):
        tr = run_mh(ShrinkingTarget(), BOX, MCMCConfig(n_iters=5, burn_in=0, m0=1, m_max=50), [0.0])
        assert tr.columns() == ["iter", "theta_1", "accepted", "u", "logalpha_lo", "logalpha_hi", "m_cur",
                                "m_prop", "refinements", "fallback_flag"]
        rows = list(tr.rows())
        assert len(rows) == 5 and all(len(r) == 10 for r in rows)


def test_adapt_proposal_regularised():
    cfg = MCMCConfig()
    cov = adapt_proposal(np.zeros((50, 2)), 0.0, cfg)
    np.testing.assert_allclose(cov, cfg.eps_reg * np.eye(2))
