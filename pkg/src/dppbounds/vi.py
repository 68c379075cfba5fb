"""Variational fitting: maximise the lower bound jointly over kernel parameters and pseudo-inputs.

Positive parameters are optimised on the log scale and pseudo-input
coordinates are unconstrained. A sweep is one parameter block followed by one
pseudo-input block (``schedule="alternate"``), or a single joint block.
A block result is kept only if it does not lower the objective, so the
per-sweep trace is nondecreasing.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.stats import norm

from .kernel import GaussianBaseMeasure, KernelParams, NumericError, gram
from .likelihood import (
    LOG_ZERO,
    Dataset,
    continuous_loglik_bounds,
    data_term_continuous,
    finite_loglik_bounds,
    is_log_zero,
)
from .lowrank import (
    BoundPair,
    FactorizationError,
    InducingSet,
    JITTER_START,
    continuous_lower_grad,
    continuous_terms,
    factorize,
    neg_logdet_bounds_finite,
)

log = logging.getLogger(__name__)


class InitStrategy(str, enum.Enum):
    QUANTILE_GRID = "QuantileGrid"
    KMEANS_PLUS_PLUS = "KMeansPlusPlus"
    RANDOM_SUBSET = "RandomSubset"


class Optimizer(str, enum.Enum):
    EVOLUTION_STRATEGY = "EvolutionStrategy"
    FINITE_DIFF_GRADIENT = "FiniteDiffGradient"
    ANALYTIC_GRADIENT = "AnalyticGradient"


class VIError(RuntimeError):
    """Optimisation produced a non-finite objective; carries the last valid state."""

    def __init__(self, msg, last_state=None):
        super().__init__(msg)
        self.last_state = last_state


@dataclass
class VIConfig:
    m: int
    init_strategy: InitStrategy = InitStrategy.QUANTILE_GRID
    optimizer: Optimizer = Optimizer.EVOLUTION_STRATEGY
    max_iters: int = 1000
    tol: float | None = None  # absolute; default 1e-6 * |F|
    patience: int = 3
    schedule: str = "alternate"
    inner_iters: int = 20
    fd_step: float = 1e-5
    es_sigma: float = 0.1
    fit_mean: bool = False
    psi: str = "quadrature"
    jitter: float = JITTER_START
    record_evaluations: bool = False
    seed: int = 0

    def __post_init__(self):
        self.init_strategy = InitStrategy(self.init_strategy)
        self.optimizer = Optimizer(self.optimizer)
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.schedule not in ("alternate", "joint"):
            raise ValueError("schedule must be 'alternate' or 'joint'")


@dataclass
class VIResult:
    params: KernelParams
    base: GaussianBaseMeasure | None
    Z: InducingSet
    trace: list[float]
    bounds: BoundPair
    gamma: np.ndarray | None
    n_iter: int
    wall_time: float
    converged: bool
    evaluations: list[tuple[np.ndarray, float]] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.trace[-1]


def overdispersion(params: KernelParams, base: GaussianBaseMeasure) -> np.ndarray:
    """gamma_d = sigma_d / rho_d, invariant to a common rescaling of coordinates."""
    return params.sigma / base.rho


def _candidates(data: Dataset) -> np.ndarray:
    X = data.ground.items if data.is_finite else data.pooled()
    return np.unique(X, axis=0)


def _grid_shape(m: int, dim: int) -> list[int]:
    shape = []
    remaining = m
    for d in range(dim, 0, -1):
        k = int(np.ceil(remaining ** (1.0 / d) - 1e-9))
        shape.append(k)
        remaining = int(np.ceil(remaining / k))
    return shape


def quantile_grid(X: np.ndarray, m: int) -> np.ndarray:
    """m points on a tensor grid of per-axis empirical quantiles of X."""
    dim = X.shape[1]
    shape = _grid_shape(m, dim)
    axes = [np.quantile(X[:, d], (np.arange(k) + 1.0) / (k + 1.0)) for d, k in enumerate(shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    G = np.stack([g.ravel() for g in mesh], axis=1)
    if G.shape[0] > m:
        G = G[np.round(np.linspace(0, G.shape[0] - 1, m)).astype(int)]
    return G


def gaussian_quantile_grid(base: GaussianBaseMeasure, m: int, spread: float = 1.0) -> np.ndarray:
    """m points on a tensor grid of Normal(mean, (spread*rho)^2) quantiles."""
    shape = _grid_shape(m, base.dim)
    axes = [base.means[d] + spread * base.scales[d] * norm.ppf((np.arange(k) + 0.5) / k)
            for d, k in enumerate(shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    G = np.stack([g.ravel() for g in mesh], axis=1)
    if G.shape[0] > m:
        G = G[np.round(np.linspace(0, G.shape[0] - 1, m)).astype(int)]
    return G


def _snap_to_items(G: np.ndarray, items: np.ndarray) -> np.ndarray:
    taken = np.zeros(items.shape[0], dtype=bool)
    out = np.empty_like(G)
    for i, g in enumerate(G):
        d2 = ((items - g) ** 2).sum(1)
        d2[taken] = np.inf
        j = int(np.argmin(d2))
        taken[j] = True
        out[i] = items[j]
    return out


def init_inducing(data: Dataset, m: int, strategy=InitStrategy.QUANTILE_GRID, seed: int = 0,
                  jitter: float = JITTER_START) -> InducingSet:
    """Data-driven starting pseudo-inputs.

    Candidates are the ground-set items (finite case) or the pooled observed
    points (continuous case).
    """
    strategy = InitStrategy(strategy)
    X = _candidates(data)
    if X.shape[0] == 0:
        raise ValueError("data-driven initialisation needs at least one observed point")
    if strategy is InitStrategy.RANDOM_SUBSET:
        if m > X.shape[0]:
            raise ValueError(f"m={m} exceeds the {X.shape[0]} distinct candidate points")
        rng = np.random.default_rng(seed)
        Z = X[rng.permutation(X.shape[0])[:m]]
    elif strategy is InitStrategy.KMEANS_PLUS_PLUS:
        if m > X.shape[0]:
            raise ValueError(f"m={m} exceeds the {X.shape[0]} distinct candidate points")
        from sklearn.cluster import kmeans_plusplus

        _, idx = kmeans_plusplus(X, m, random_state=seed)
        Z = X[idx]
    else:
        Z = quantile_grid(X, m)
        if data.is_finite:
            if m > X.shape[0]:
                raise ValueError(f"m={m} exceeds the {X.shape[0]} ground-set items")
            Z = _snap_to_items(Z, X)
        else:
            Z = _dedupe(Z, X)
    return InducingSet(Z, jitter=jitter)


def _dedupe(Z: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Nudge repeated grid points apart (quantiles of few distinct values can coincide)."""
    Z = Z.copy()
    scale = np.ptp(X, axis=0)
    scale[scale == 0] = 1.0
    _, first = np.unique(Z, axis=0, return_index=True)
    dup = np.setdiff1d(np.arange(Z.shape[0]), first)
    for k, i in enumerate(dup, start=1):
        Z[i] += 1e-3 * scale * k / (len(dup) + 1)
    return Z


# --------------------------------------------------------------------------
# objective


def _data_grad_continuous(params: KernelParams, base: GaussianBaseMeasure, patterns):
    d = params.dim
    g_logsig = np.zeros(d)
    g_logrho = np.zeros(d)
    g_mean = np.zeros(d)
    g_logkappa = 0.0
    sig2 = params.sigma**2
    for X in patterns:
        k = X.shape[0]
        if k == 0:
            continue
        K = gram(params, X)
        Kinv = linalg.cho_solve(linalg.cho_factor(K, lower=True), np.eye(k))
        diff2 = (X[:, None, :] - X[None, :, :]) ** 2
        g_logsig += np.einsum("ij,ijd->d", Kinv * K, diff2) / sig2
        z = (X - base.mu) / base.rho
        g_logrho += (z**2 - 1.0).sum(0)
        g_mean += (z / base.rho).sum(0)
        g_logkappa += k
    return g_logkappa, g_logsig, g_logrho, g_mean


class _Problem:
    """Packs (theta, Z) into flat vectors and evaluates the bound."""

    def __init__(self, data: Dataset, config: VIConfig, params: KernelParams, base: GaussianBaseMeasure | None):
        self.data = data
        self.config = config
        self.dim = data.dim
        self.finite = data.is_finite
        self.base0 = base
        self.evaluations: list[tuple[np.ndarray, float]] = []
        self.n_theta = 1 + self.dim if self.finite else 1 + 2 * self.dim + (self.dim if config.fit_mean else 0)
        self.theta0 = self.pack_theta(params, base)

    def pack_theta(self, params, base) -> np.ndarray:
        if self.finite:
            return np.concatenate([[np.log(params.amplitude)], np.log(params.sigma)])
        parts = [[np.log(base.intensity)], np.log(params.sigma), np.log(base.rho)]
        if self.config.fit_mean:
            parts.append(base.mu)
        return np.concatenate(parts)

    def unpack_theta(self, th):
        d = self.dim
        if self.finite:
            return KernelParams(tuple(np.exp(th[1:1 + d])), float(np.exp(th[0]))), None
        params = KernelParams(tuple(np.exp(th[1:1 + d])))
        mu = th[1 + 2 * d:1 + 3 * d] if self.config.fit_mean else self.base0.mu
        base = GaussianBaseMeasure(float(np.exp(th[0])), tuple(mu), tuple(np.exp(th[1 + d:1 + 2 * d])))
        return params, base

    def inducing(self, zflat) -> InducingSet:
        return InducingSet(np.asarray(zflat).reshape(-1, self.dim), jitter=self.config.jitter)

    def value(self, th, zflat) -> float:
        try:
            params, base = self.unpack_theta(th)
            Z = self.inducing(zflat)
            if self.finite:
                v = finite_loglik_bounds(params, self.data, Z).lower
            else:
                v = continuous_loglik_bounds(params, base, self.data, Z, psi=self.config.psi).lower
        except (FactorizationError, NumericError, ValueError, np.linalg.LinAlgError, OverflowError):
            v = LOG_ZERO
        if np.isnan(v):
            raise VIError("objective evaluated to NaN", (np.array(th), np.array(zflat)))
        if self.config.record_evaluations:
            self.evaluations.append((np.concatenate([th, zflat]), v))
        return v

    def value_and_grad(self, th, zflat):
        """Analytic gradient of the continuous bound, w.r.t. (theta, Z)."""
        if self.finite:
            raise ValueError("analytic gradients are implemented for the continuous bound only")
        try:
            params, base = self.unpack_theta(th)
            Z = self.inducing(zflat)
            dt = data_term_continuous(params, base, self.data.patterns)
            if is_log_zero(dt):
                raise NumericError("singular pattern Gram")
            lo, _, gZ, g = continuous_lower_grad(params, base, Z, psi=self.config.psi)
        except (FactorizationError, NumericError, ValueError, np.linalg.LinAlgError, OverflowError):
            return LOG_ZERO, np.zeros(len(th)), np.zeros(len(zflat))
        T = self.data.T
        dk, ds, dr, dm = _data_grad_continuous(params, base, self.data.patterns)
        d = self.dim
        gth = np.zeros(len(th))
        gth[0] = dk + T * g["log_kappa"]
        gth[1:1 + d] = ds + T * g["log_sigma"]
        gth[1 + d:1 + 2 * d] = dr + T * g["log_rho"]
        if self.config.fit_mean:
            gth[1 + 2 * d:] = dm + T * g["mean"]
        v = dt + T * lo
        if np.isnan(v):
            raise VIError("objective evaluated to NaN", (np.array(th), np.array(zflat)))
        if self.config.record_evaluations:
            self.evaluations.append((np.concatenate([th, zflat]), v))
        return v, gth, T * gZ.ravel()

    def bounds(self, th, zflat) -> BoundPair:
        params, base = self.unpack_theta(th)
        Z = self.inducing(zflat)
        if self.finite:
            return finite_loglik_bounds(params, self.data, Z)
        return continuous_loglik_bounds(params, base, self.data, Z, psi=self.config.psi)


def fd_gradient(f, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences with step rel_step * max(1, |x_i|)."""
    g = np.zeros_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _block_functions(problem: _Problem, th, z, which: str):
    """Objective (to maximise) and optional gradient restricted to one block."""
    nt = problem.n_theta

    def split(x):
        if which == "theta":
            return x, z
        if which == "Z":
            return th, x
        return x[:nt], x[nt:]

    def f(x):
        a, b = split(x)
        return problem.value(a, b)

    def fg(x):
        a, b = split(x)
        v, gth, gz = problem.value_and_grad(a, b)
        g = {"theta": gth, "Z": gz}.get(which)
        return v, (np.concatenate([gth, gz]) if g is None else g)

    return f, fg


def _lbfgs_block(f, fg, x0, config: VIConfig, analytic: bool):
    if analytic:
        def obj(x):
            v, g = fg(x)
            return -v, -g
    else:
        def obj(x):
            v = f(x)
            return -v, -fd_gradient(f, x, config.fd_step)
    res = optimize.minimize(obj, x0, jac=True, method="L-BFGS-B", options={"maxiter": config.inner_iters})
    return res.x, -res.fun


def _es_block(f, x0, config: VIConfig, seed: int, sigma0: float):
    import cma

    p = x0.size
    popsize = 4 + int(np.floor(3 * np.log(p)))
    es = cma.CMAEvolutionStrategy(
        x0, sigma0,
        {"CMA_diagonal": True, "popsize": popsize, "seed": seed, "verbose": -9, "verb_log": 0,
         "maxiter": config.inner_iters},
    )
    best_x, best_v = x0, f(x0)
    while not es.stop():
        X = es.ask()
        vals = [f(np.asarray(x)) for x in X]
        es.tell(X, [-v for v in vals])
        k = int(np.argmax(vals))
        if vals[k] > best_v:
            best_x, best_v = np.asarray(X[k]), vals[k]
    return best_x, best_v


def vi_objective(params: KernelParams, Z, data: Dataset, base: GaussianBaseMeasure | None = None,
                 psi: str = "quadrature") -> float:
    """The lower bound on the log-likelihood at (params, Z)."""
    if data.is_finite:
        return finite_loglik_bounds(params, data, Z).lower
    return continuous_loglik_bounds(params, base, data, Z, psi=psi).lower


def default_start(data: Dataset) -> tuple[KernelParams, GaussianBaseMeasure | None]:
    """Moment-based starting point: base measure from pooled mean/std, lengthscales a fraction of it."""
    X = data.pooled()
    if data.is_finite:
        spread = np.std(data.ground.items, axis=0)
        spread[spread == 0] = 1.0
        return KernelParams(tuple(0.2 * spread), 1.0), None
    sd = np.std(X, axis=0) if X.shape[0] > 1 else np.ones(data.dim)
    sd[sd == 0] = 1.0
    base = GaussianBaseMeasure(max(float(np.mean(data.counts())), 1.0) * 2.0, tuple(X.mean(0)), tuple(sd))
    return KernelParams(tuple(0.3 * sd)), base


def fit_vi(data: Dataset, config: VIConfig, params0: KernelParams | None = None,
           base0: GaussianBaseMeasure | None = None, Z0=None) -> VIResult:
    """Alternating (or joint) maximisation of the lower bound over theta and Z."""
    t_start = time.perf_counter()
    if params0 is None or (base0 is None and not data.is_finite):
        p_def, b_def = default_start(data)
        params0 = params0 or p_def
        base0 = base0 or b_def
    if Z0 is None:
        Z0 = init_inducing(data, config.m, config.init_strategy, config.seed, config.jitter)
    Z0 = Z0 if isinstance(Z0, InducingSet) else InducingSet(Z0, jitter=config.jitter)
    if Z0.m != config.m:
        raise ValueError(f"initial inducing set has {Z0.m} points, config asks for {config.m}")

    problem = _Problem(data, config, params0, base0)
    th = problem.theta0.copy()
    z = Z0.Z.ravel().copy()
    analytic = config.optimizer is Optimizer.ANALYTIC_GRADIENT
    if analytic and data.is_finite:
        raise ValueError("AnalyticGradient is only available for continuous data")

    F = problem.value(th, z)
    if is_log_zero(F):
        raise VIError("objective is log-zero at the starting point", (th, z))
    trace = [F]
    z_scale = float(np.mean(np.ptp(Z0.Z, axis=0))) or 1.0
    blocks = ["theta", "Z"] if config.schedule == "alternate" else ["joint"]
    quiet = 0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        for bi, which in enumerate(blocks):
            f, fg = _block_functions(problem, th, z, which)
            x0 = {"theta": th, "Z": z}.get(which)
            if x0 is None:
                x0 = np.concatenate([th, z])
            if config.optimizer is Optimizer.EVOLUTION_STRATEGY:
                if which == "joint":
                    # the CMA step size is shared, so put Z on the log-parameter scale
                    scale = np.concatenate([np.ones(th.size), np.full(z.size, z_scale)])
                    fs = lambda u: f(u * scale)  # noqa: E731
                    xb, vb = _es_block(fs, x0 / scale, config, config.seed * 1000 + 2 * it + bi + 1, config.es_sigma)
                    xb = xb * scale
                else:
                    sigma0 = config.es_sigma * (z_scale if which == "Z" else 1.0)
                    xb, vb = _es_block(f, x0, config, config.seed * 1000 + 2 * it + bi + 1, sigma0)
            else:
                xb, vb = _lbfgs_block(f, fg, x0, config, analytic)
                vb = f(xb)
            if np.isnan(vb):
                raise VIError("objective evaluated to NaN", (th, z))
            if vb >= F:
                if which == "theta":
                    th = np.asarray(xb)
                elif which == "Z":
                    z = np.asarray(xb)
                else:
                    th, z = np.asarray(xb[:problem.n_theta]), np.asarray(xb[problem.n_theta:])
                F = vb
        tol = config.tol if config.tol is not None else 1e-6 * max(abs(F), 1e-12)
        quiet = quiet + 1 if abs(F - trace[-1]) < tol else 0
        trace.append(F)
        log.debug("sweep %d: F=%.10g", it, F)
        if quiet >= config.patience:
            converged = True
            break

    params, base = problem.unpack_theta(th)
    Z = problem.inducing(z)
    bounds = problem.bounds(th, z)
    gamma = None if data.is_finite else overdispersion(params, base)
    return VIResult(params, base, Z, trace, bounds, gamma, it, time.perf_counter() - t_start, converged,
                    problem.evaluations)


# --------------------------------------------------------------------------
# pseudo-input placement at fixed parameters


def optimize_inducing(params: KernelParams, base: GaussianBaseMeasure, Z0, iters: int = 50,
                      psi: str = "quadrature", jitter: float = JITTER_START) -> InducingSet:
    """Local maximisation of the continuous lower bound over Z, theta fixed."""
    Z0 = Z0 if isinstance(Z0, InducingSet) else InducingSet(Z0, jitter=jitter)
    shape = Z0.Z.shape

    def obj(zf):
        try:
            lo, _, gZ, _ = continuous_lower_grad(params, base, InducingSet(zf.reshape(shape), jitter=Z0.jitter), psi)
        except (FactorizationError, NumericError, ValueError, np.linalg.LinAlgError):
            return -LOG_ZERO, np.zeros(zf.size)
        return -lo, -gZ.ravel()

    f0 = obj(Z0.Z.ravel())[0]
    res = optimize.minimize(obj, Z0.Z.ravel(), jac=True, method="L-BFGS-B", options={"maxiter": iters})
    if not res.fun <= f0:
        return Z0
    try:
        return InducingSet(res.x.reshape(shape), jitter=Z0.jitter)
    except ValueError:
        return Z0


def place_inducing(params: KernelParams, base: GaussianBaseMeasure, m: int, budget: int = 20,
                   refine_iters: int = 0, psi: str = "quadrature", jitter: float = JITTER_START) -> InducingSet:
    """Pseudo-inputs for fixed (params, base): Gaussian quantile grid with a tuned spread.

    The spread of the grid is chosen by a bounded scalar search of at most
    ``budget`` bound evaluations; ``refine_iters`` L-BFGS steps on all
    coordinates follow. Deterministic in its inputs.
    """
    def neg_lower(log_spread):
        Z = InducingSet(gaussian_quantile_grid(base, m, float(np.exp(log_spread))), jitter=jitter)
        try:
            return -continuous_terms(params, base, Z, psi).lower
        except (FactorizationError, NumericError, np.linalg.LinAlgError):
            return -LOG_ZERO

    res = optimize.minimize_scalar(neg_lower, bounds=(np.log(0.2), np.log(4.0)), method="bounded",
                                   options={"maxiter": max(budget, 1), "xatol": 1e-3})
    Z = InducingSet(gaussian_quantile_grid(base, m, float(np.exp(res.x))), jitter=jitter)
    if refine_iters > 0:
        Z = optimize_inducing(params, base, Z, refine_iters, psi)
    return Z
