"""Metropolis-Hastings with retrospective, bound-based accept decisions.

The uniform ``u`` of each iteration is drawn before any likelihood work.
Bounds on the log acceptance ratio are then tightened, by adding
pseudo-inputs to both the current and the proposed state, until ``log u``
falls outside the interval. The decision is then the one the exact chain
would make. If the pseudo-input cap is reached first, the interval midpoint
decides and the iteration is flagged.

Proposals are Gaussian random walks on transformed parameters with an
adaptive covariance (empirical covariance plus a ridge, times a global scale
tuned by diminishing stochastic approximation toward the target acceptance).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import linalg

from .kernel import GaussianBaseMeasure, KernelParams, NumericError
from .likelihood import (
    DENSE_LIMIT,
    LOG_ZERO,
    Dataset,
    continuous_loglik_bounds,
    finite_loglik_bounds,
    finite_loglik_exact,
    is_log_zero,
)
from .lowrank import BoundPair, BoundSubject, FactorizationError, InducingSet
from .streams import PROPOSAL, RETROSPECTIVE, substream
from .vi import place_inducing

log = logging.getLogger(__name__)

# interval carrying no information; finite so that BoundPair arithmetic stays defined
VACUOUS = BoundPair(LOG_ZERO, -LOG_ZERO, BoundSubject.LOG_LIKELIHOOD)
_NUMERIC = (FactorizationError, NumericError, np.linalg.LinAlgError, FloatingPointError, OverflowError)


@dataclass(frozen=True)
class PriorBox:
    """Independent uniform priors on a box.

    The chain moves on ``theta``. For coordinates with ``on_exp`` set, the
    box and the uniform density apply to ``exp(theta_i)`` and the log-Jacobian
    ``theta_i`` is added to the log density.
    """

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    on_exp: tuple[bool, ...] | None = None

    def __post_init__(self):
        p = len(self.names)
        on_exp = self.on_exp if self.on_exp is not None else (False,) * p
        object.__setattr__(self, "on_exp", tuple(bool(b) for b in on_exp))
        if not (len(self.lower) == len(self.upper) == len(self.on_exp) == p) or p == 0:
            raise ValueError("prior box needs one (lower, upper, on_exp) per parameter")
        for lo, hi in zip(self.lower, self.upper):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError("prior intervals must be finite with lower < upper")
        for lo, e in zip(self.lower, self.on_exp):
            if e and lo <= 0:
                raise ValueError("a box on exp(theta) needs a positive lower end")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def gaussian_toy(cls) -> "PriorBox":
        """kappa ~ U[200, 2000] on kappa itself; log alpha, log eps ~ U[-10, 10]."""
        return cls(("log_kappa", "log_alpha", "log_eps"), (200.0, -10.0, -10.0), (2000.0, 10.0, 10.0),
                   (True, False, False))

    def natural(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.where(self.on_exp, np.exp(np.minimum(theta, 700.0)), theta)

    def contains(self, theta) -> bool:
        x = self.natural(theta)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,) or not np.all(np.isfinite(theta)) or not self.contains(theta):
            return LOG_ZERO
        widths = np.subtract(self.upper, self.lower)
        return float(-np.sum(np.log(widths)) + np.sum(theta[list(self.on_exp)]))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = rng.uniform(self.lower, self.upper, size=(n, self.dim))
        return np.where(self.on_exp, np.log(np.maximum(x, 1e-300)), x)


class Target(Protocol):
    """A likelihood the sampler can bound at increasing pseudo-input counts."""

    def inducing(self, theta: np.ndarray, m: int): ...

    def bounds_at(self, theta: np.ndarray, Z) -> BoundPair: ...

    def exact(self, theta: np.ndarray) -> float | None: ...


class GaussianToyTarget:
    """1-D Gaussian kernel with a Gaussian base measure, in (log kappa, log alpha, log eps).

    Pseudo-inputs for each (theta, m) come from :func:`place_inducing`, which
    is deterministic, so bounds are a function of (theta, m) alone.
    """

    def __init__(self, data: Dataset, convention: str = "variance", psi: str = "quadrature", z_budget: int = 20):
        if data.is_finite or data.dim != 1:
            raise ValueError("the Gaussian toy target needs 1-D continuous patterns")
        self.data = data
        self.convention = convention
        self.psi = psi
        self.z_budget = z_budget

    def model(self, theta) -> tuple[KernelParams, GaussianBaseMeasure]:
        kappa, alpha, eps = np.exp(np.asarray(theta, dtype=float))
        return KernelParams.from_eps(float(eps)), GaussianBaseMeasure.from_kappa_alpha(
            float(kappa), float(alpha), self.convention)

    def inducing(self, theta, m: int) -> InducingSet:
        params, base = self.model(theta)
        return place_inducing(params, base, m, budget=self.z_budget, psi=self.psi)

    def bounds_at(self, theta, Z) -> BoundPair:
        params, base = self.model(theta)
        return continuous_loglik_bounds(params, base, self.data, Z, psi=self.psi)

    def exact(self, theta) -> float | None:
        from .oracle import OracleError, exact_loglik_continuous

        try:
            return exact_loglik_continuous(*self.model(theta), self.data)
        except (OracleError, MemoryError, *_NUMERIC):
            return None


class FiniteTarget:
    """Finite DPP with kernel a * exp(-|x-y|^2 / 2 sigma^2), theta = (log a, log sigma_1..d).

    Pseudo-inputs are the first m of a fixed k-means++ ordering of the
    ground-set items, so the sets are nested in m and saturate at the ground set.
    """

    def __init__(self, data: Dataset, seed: int = 0):
        if not data.is_finite:
            raise ValueError("the finite target needs patterns over a ground set")
        from sklearn.cluster import kmeans_plusplus

        self.data = data
        items = data.ground.items
        _, self.order = kmeans_plusplus(items, items.shape[0], random_state=seed)

    def model(self, theta) -> KernelParams:
        theta = np.asarray(theta, dtype=float)
        return KernelParams(tuple(np.exp(theta[1:])), float(np.exp(theta[0])))

    def inducing(self, theta, m: int) -> InducingSet:
        return InducingSet(self.data.ground.items[self.order[:m]])

    def bounds_at(self, theta, Z) -> BoundPair:
        return finite_loglik_bounds(self.model(theta), self.data, Z)

    def exact(self, theta) -> float | None:
        if self.data.ground.n > DENSE_LIMIT:
            return None
        return finite_loglik_exact(self.model(theta), self.data)


class FlatTarget:
    """Likelihood identically zero: the chain targets the prior."""

    def inducing(self, theta, m: int):
        return None

    def bounds_at(self, theta, Z) -> BoundPair:
        return BoundPair(0.0, 0.0, BoundSubject.LOG_LIKELIHOOD)

    def exact(self, theta) -> float:
        return 0.0


@dataclass
class MCMCConfig:
    n_iters: int = 10_000
    burn_in: int = 1_000
    m0: int = 20
    m_step: int = 10
    m_max: int = 200
    target_accept: float = 0.25
    init_scale: float = 0.1
    adapt_start: int = 100
    adapt_rate: float = 1.0
    eps_reg: float = 1e-6
    check_exact: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        if not 0 <= self.burn_in < self.n_iters:
            raise ValueError("burn_in must lie in [0, n_iters)")
        if self.m0 < 1 or self.m_step < 1 or self.m_max < self.m0:
            raise ValueError("need m0 >= 1, m_step >= 1 and m_max >= m0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if not (self.init_scale > 0 and self.eps_reg > 0 and self.adapt_rate > 0):
            raise ValueError("init_scale, eps_reg and adapt_rate must be positive")


@dataclass
class ChainState:
    """A chain position with the tightest log-posterior bounds found so far."""

    theta: np.ndarray
    m: int
    bounds: BoundPair | None = None
    log_prior: float = 0.0
    exact: float | None = None


@dataclass
class Decision:
    accepted: bool
    lower: float
    upper: float
    refinements: int = 0
    fallback: bool = False
    widths: list[float] = field(default_factory=list)


def log_posterior_bounds(theta, Z, target: Target, prior: PriorBox) -> BoundPair:
    """Likelihood bounds shifted by the log prior; the log-zero pair outside the box."""
    lp = prior.log_density(theta)
    if is_log_zero(lp):
        return BoundPair(LOG_ZERO, LOG_ZERO, BoundSubject.LOG_LIKELIHOOD)
    b = target.bounds_at(np.asarray(theta, dtype=float), Z)
    if is_log_zero(b.upper):
        return BoundPair(LOG_ZERO, LOG_ZERO, BoundSubject.LOG_LIKELIHOOD)
    return b.shift(lp)


def _evaluate(state: ChainState, target: Target, prior: PriorBox):
    try:
        Z = target.inducing(state.theta, state.m)
        b = log_posterior_bounds(state.theta, Z, target, prior)
    except _NUMERIC as exc:
        log.debug("bound evaluation failed at m=%d: %s", state.m, exc)
        b = VACUOUS
    state.bounds = b if state.bounds is None else state.bounds.intersect(b)


def retrospective_accept(cur: ChainState, prop: ChainState, u: float, target: Target, prior: PriorBox,
                         config: MCMCConfig) -> Decision:
    """Decide acceptance from a pre-drawn ``u`` by refining bounds on log alpha.

    Both states are updated in place: their ``m`` and cached bounds reflect
    the refinement performed.
    """
    logu = float(np.log(u))
    if is_log_zero(prop.log_prior):
        return Decision(False, LOG_ZERO, LOG_ZERO)
    if cur.bounds is None:
        _evaluate(cur, target, prior)
    if prop.bounds is None:
        _evaluate(prop, target, prior)
    refinements = 0
    widths = []
    while True:
        lo = prop.bounds.lower - cur.bounds.upper
        hi = prop.bounds.upper - cur.bounds.lower
        widths.append(hi - lo)
        if is_log_zero(prop.bounds.upper):
            return Decision(False, lo, hi, refinements, False, widths)
        if logu < lo:
            return Decision(True, lo, hi, refinements, False, widths)
        if logu >= hi:
            return Decision(False, lo, hi, refinements, False, widths)
        if cur.m >= config.m_max and prop.m >= config.m_max:
            return Decision(bool(logu < 0.5 * (lo + hi)), lo, hi, refinements, True, widths)
        for s in (cur, prop):
            if s.m < config.m_max:
                s.m = min(s.m + config.m_step, config.m_max)
                _evaluate(s, target, prior)
        refinements += 1


def adapt_proposal(history, log_scale: float, config: MCMCConfig) -> np.ndarray:
    """exp(log_scale) * (empirical covariance of history + eps_reg * I)."""
    H = np.atleast_2d(np.asarray(history, dtype=float))
    p = H.shape[1]
    emp = np.cov(H, rowvar=False).reshape(p, p) if H.shape[0] > 1 else np.zeros((p, p))
    return float(np.exp(log_scale)) * (emp + config.eps_reg * np.eye(p))


def update_log_scale(log_scale: float, accepted: bool, k: int, config: MCMCConfig) -> float:
    """Robbins-Monro step on the log global scale with gain proportional to 1/k."""
    gain = config.adapt_rate * config.adapt_start / (config.adapt_start + k)
    return log_scale + gain * (float(accepted) - config.target_accept)


@dataclass
class ChainTrace:
    names: tuple[str, ...]
    theta: np.ndarray
    accepted: np.ndarray
    u: np.ndarray
    logalpha_lo: np.ndarray
    logalpha_hi: np.ndarray
    m_cur: np.ndarray
    m_prop: np.ndarray
    refinements: np.ndarray
    fallback: np.ndarray
    logalpha_exact: np.ndarray
    burn_in: int
    mode: str
    wall_time: float = 0.0

    @property
    def n_iters(self) -> int:
        return self.theta.shape[0]

    def acceptance_rate(self, after_burn_in: bool = True) -> float:
        a = self.accepted[self.burn_in:] if after_burn_in else self.accepted
        return float(np.mean(a))

    @property
    def max_m(self) -> int:
        return int(max(self.m_cur.max(), self.m_prop.max()))

    def m_histogram(self) -> dict[int, int]:
        used = np.maximum(self.m_cur, self.m_prop)
        vals, counts = np.unique(used, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    @property
    def n_fallback(self) -> int:
        return int(self.fallback.sum())

    def ideal_decisions(self) -> np.ndarray:
        """Decision the exact chain would take, from the recorded exact log alpha (NaN where unknown)."""
        return np.log(self.u) < self.logalpha_exact

    def mismatches(self) -> int:
        """Non-fallback decisions that differ from the exact-chain decision."""
        known = np.isfinite(self.logalpha_exact) & ~self.fallback
        return int(np.sum(self.accepted[known] != self.ideal_decisions()[known]))

    def posterior(self) -> np.ndarray:
        return self.theta[self.burn_in:]

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": self.n_iters,
            "burn_in": self.burn_in,
            "acceptance_rate": self.acceptance_rate(),
            "max_m": self.max_m,
            "fallbacks": self.n_fallback,
            "refinements": int(self.refinements.sum()),
            "wall_time": self.wall_time,
        }

    def columns(self) -> list[str]:
        return (["iter"] + [f"theta_{i + 1}" for i in range(self.theta.shape[1])]
                + ["accepted", "u", "logalpha_lo", "logalpha_hi", "m_cur", "m_prop", "refinements", "fallback_flag"])

    def rows(self):
        for k in range(self.n_iters):
            yield ([k + 1, *self.theta[k].tolist(), int(self.accepted[k]), float(self.u[k]),
                    float(self.logalpha_lo[k]), float(self.logalpha_hi[k]), int(self.m_cur[k]),
                    int(self.m_prop[k]), int(self.refinements[k]), int(self.fallback[k])])


def _exact_log_posterior(state: ChainState, target: Target) -> float | None:
    if state.exact is None:
        if is_log_zero(state.log_prior):
            state.exact = LOG_ZERO
        else:
            ll = target.exact(state.theta)
            state.exact = None if ll is None else ll + state.log_prior
    return state.exact


def run_mh(target: Target, prior: PriorBox, config: MCMCConfig, theta0, mode: str = "retrospective") -> ChainTrace:
    """Adaptive random-walk MH.

    ``mode="retrospective"`` decides with bounds; ``mode="ideal"`` uses the
    exact likelihood from ``target.exact``. Both draw proposals and uniforms
    from the same named sub-streams, so under a common seed they see the same
    ``u`` sequence and agree step for step whenever every decision agrees.
    With ``config.check_exact`` the retrospective chain also records the exact
    log acceptance ratio for auditing.
    """
    if mode not in ("retrospective", "ideal"):
        raise ValueError("mode must be 'retrospective' or 'ideal'")
    t0 = time.perf_counter()
    rng_prop = substream(config.seed, PROPOSAL)
    rng_u = substream(config.seed, RETROSPECTIVE)
    theta0 = np.asarray(theta0, dtype=float)
    p = prior.dim
    if theta0.shape != (p,):
        raise ValueError(f"theta0 must have {p} entries")
    cur = ChainState(theta0.copy(), config.m0, log_prior=prior.log_density(theta0))
    if is_log_zero(cur.log_prior):
        raise ValueError("starting point lies outside the prior box")

    n = config.n_iters
    thetas = np.empty((n, p))
    acc = np.zeros(n, dtype=bool)
    us = np.empty(n)
    lo_a = np.empty(n)
    hi_a = np.empty(n)
    m_cur = np.zeros(n, dtype=int)
    m_prop = np.zeros(n, dtype=int)
    refs = np.zeros(n, dtype=int)
    fb = np.zeros(n, dtype=bool)
    exact_a = np.full(n, np.nan)

    log_scale = float(np.log(2.38**2 / p))
    base_cov = np.diag(np.full(p, config.init_scale**2))
    for k in range(n):
        # u first: nothing below may influence it
        u = float(rng_u.uniform())
        while u == 0.0:
            u = float(rng_u.uniform())
        us[k] = u
        if k < config.adapt_start:
            cov = float(np.exp(log_scale)) * base_cov
        else:
            cov = adapt_proposal(thetas[:k], log_scale, config)
        step = linalg.cholesky(cov, lower=True) @ rng_prop.standard_normal(p)
        theta_p = cur.theta + step
        prop = ChainState(theta_p, config.m0, log_prior=prior.log_density(theta_p))

        if mode == "ideal":
            ec = _exact_log_posterior(cur, target)
            ep = _exact_log_posterior(prop, target)
            if ec is None or ep is None:
                raise NumericError("exact likelihood unavailable in ideal mode")
            la = ep - ec
            d = Decision(bool(np.log(u) < la), la, la)
            exact_a[k] = la
        else:
            d = retrospective_accept(cur, prop, u, target, prior, config)
            m_cur[k] = cur.m
            m_prop[k] = prop.m if prop.bounds is not None else 0
            if config.check_exact:
                ec = _exact_log_posterior(cur, target)
                ep = _exact_log_posterior(prop, target)
                if ec is not None and ep is not None:
                    exact_a[k] = ep - ec

        acc[k], lo_a[k], hi_a[k], refs[k], fb[k] = d.accepted, d.lower, d.upper, d.refinements, d.fallback
        if d.accepted:
            cur = prop
        thetas[k] = cur.theta
        if k >= config.adapt_start:
            log_scale = update_log_scale(log_scale, d.accepted, k - config.adapt_start + 1, config)
    trace = ChainTrace(prior.names, thetas, acc, us, lo_a, hi_a, m_cur, m_prop, refs, fb, exact_a,
                       config.burn_in, mode, time.perf_counter() - t0)
    log.info("chain done: %s", trace.summary())
    return trace


__all__ = [
    "ChainState",
    "ChainTrace",
    "Decision",
    "FiniteTarget",
    "FlatTarget",
    "GaussianToyTarget",
    "MCMCConfig",
    "PriorBox",
    "adapt_proposal",
    "log_posterior_bounds",
    "retrospective_accept",
    "run_mh",
    "update_log_scale",
]
