"""Exact and bounded DPP log-likelihoods.

Finite case: a realization is a subset of a ground set of n items with
coordinates; the likelihood of T realizations is

    sum_t logdet L_{Y_t} - T logdet(L + I).

Continuous case: the Janossy density of a pattern x_1..x_k is

    det(L(x_i, x_j)) prod_i mu'(x_i) / det(I + L_op).

A singular pattern Gram gives the finite sentinel ``LOG_ZERO`` rather than
-inf, so sums and differences stay orderable and never produce NaN.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .kernel import GaussianBaseMeasure, KernelParams, as_points, base_log_density, gram
from .lowrank import (
    BoundPair,
    BoundSubject,
    InducingSet,
    factorize,
    logdet_identity_plus,
    neg_logdet_bounds_continuous,
    neg_logdet_bounds_finite,
)

LOG_ZERO = -1e250
DENSE_LIMIT = 2000


def is_log_zero(value: float) -> bool:
    return value <= 0.5 * LOG_ZERO


def safe_logdet(K: np.ndarray) -> float:
    """log det of a symmetric PSD matrix; ``LOG_ZERO`` when numerically singular."""
    if K.shape[0] == 0:
        return 0.0
    try:
        C = linalg.cholesky(K, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return LOG_ZERO
    d = np.diag(C)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        return LOG_ZERO
    # a pivot at round-off level means the Gram is singular for all practical purposes
    if d.min() ** 2 <= 1e-13 * float(np.max(np.diag(K))):
        return LOG_ZERO
    return 2.0 * float(np.sum(np.log(d)))


@dataclass(frozen=True)
class GroundSet:
    """Finite ground set: n distinct items, each with a coordinate vector."""

    items: np.ndarray

    def __post_init__(self):
        X = as_points(self.items)
        if X.shape[0] < 1:
            raise ValueError("ground set must contain at least one item")
        if X.shape[0] > 1 and np.unique(X, axis=0).shape[0] != X.shape[0]:
            raise ValueError("ground set items must be distinct")
        X.setflags(write=False)
        object.__setattr__(self, "items", X)

    @property
    def n(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]


def finite_pattern(indices, n: int) -> np.ndarray:
    """Validate a realization: sorted, distinct 0-based indices into a ground set of size n."""
    idx = np.asarray(indices, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"pattern indices must lie in [0, {n})")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("pattern indices must be strictly increasing")
    return idx


def continuous_pattern(points, dim: int) -> np.ndarray:
    X = as_points(points, dim)
    if X.shape[0] > 1 and np.unique(X, axis=0).shape[0] != X.shape[0]:
        raise ValueError("points in a realization must be distinct")
    if not np.all(np.isfinite(X)):
        raise ValueError("pattern coordinates must be finite")
    return X


@dataclass
class Dataset:
    """T realizations on a common domain.

    With ``ground`` set, patterns are index arrays into it; otherwise they are
    ``(k_t, dim)`` coordinate arrays of a continuous process on R^dim.
    """

    patterns: list = field(default_factory=list)
    ground: GroundSet | None = None
    dim: int | None = None

    def __post_init__(self):
        if len(self.patterns) < 1:
            raise ValueError("a dataset needs at least one realization")
        if self.ground is not None:
            self.dim = self.ground.dim
            self.patterns = [finite_pattern(sorted(np.asarray(p, dtype=int).reshape(-1)), self.ground.n)
                             for p in self.patterns]
        else:
            if self.dim is None:
                shapes = [np.asarray(p).shape for p in self.patterns]
                dims = {s[1] for s in shapes if len(s) == 2}
                self.dim = dims.pop() if len(dims) == 1 else 1
            self.patterns = [continuous_pattern(p, self.dim) for p in self.patterns]

    @property
    def T(self) -> int:
        return len(self.patterns)

    @property
    def is_finite(self) -> bool:
        return self.ground is not None

    def pooled(self) -> np.ndarray:
        """All observed coordinates stacked, shape ``(N, dim)``."""
        if self.is_finite:
            idx = np.concatenate([p for p in self.patterns]) if self.patterns else np.zeros(0, int)
            return self.ground.items[idx]
        return np.concatenate(self.patterns, axis=0)

    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.patterns])


def data_term_finite(params: KernelParams, data: Dataset) -> float:
    """sum_t logdet L_{Y_t}."""
    total = 0.0
    for idx in data.patterns:
        total += safe_logdet(gram(params, data.ground.items[idx]))
        if is_log_zero(total):
            return LOG_ZERO
    return total


def data_term_continuous(params: KernelParams, base: GaussianBaseMeasure, patterns: Sequence[np.ndarray]) -> float:
    """sum_t [logdet L(x_i, x_j) + sum_i log mu'(x_i)]."""
    total = 0.0
    for X in patterns:
        if len(X) == 0:
            continue
        ld = safe_logdet(gram(params, X))
        if is_log_zero(ld):
            return LOG_ZERO
        total += ld + float(np.sum(base_log_density(base, X)))
    return total


def finite_loglik_exact(params: KernelParams, data: Dataset) -> float:
    if not data.is_finite:
        raise ValueError("finite likelihood needs a dataset over a ground set")
    n = data.ground.n
    if n > DENSE_LIMIT:
        raise ValueError(f"dense likelihood limited to n <= {DENSE_LIMIT}")
    dt = data_term_finite(params, data)
    if is_log_zero(dt):
        return LOG_ZERO
    return dt - data.T * logdet_identity_plus(gram(params, data.ground.items))


def finite_loglik_bounds(params: KernelParams, data: Dataset, Z) -> BoundPair:
    if not data.is_finite:
        raise ValueError("finite likelihood needs a dataset over a ground set")
    dt = data_term_finite(params, data)
    if is_log_zero(dt):
        return BoundPair(LOG_ZERO, LOG_ZERO, BoundSubject.LOG_LIKELIHOOD)
    b = neg_logdet_bounds_finite(factorize(params, data.ground.items, Z))
    return b.scale(data.T).shift(dt, BoundSubject.LOG_LIKELIHOOD)


def continuous_loglik_bounds(params: KernelParams, base: GaussianBaseMeasure, data: Dataset, Z,
                             psi: str = "quadrature") -> BoundPair:
    """Janossy log-densities summed over patterns, with the normaliser replaced by its bounds.

    ``psi`` selects how the integral matrix is formed ("quadrature" or "analytic").
    """
    if data.is_finite:
        raise ValueError("continuous likelihood needs coordinate patterns")
    dt = data_term_continuous(params, base, data.patterns)
    if is_log_zero(dt):
        return BoundPair(LOG_ZERO, LOG_ZERO, BoundSubject.LOG_LIKELIHOOD)
    b = neg_logdet_bounds_continuous(params, base, Z, psi=psi)
    return b.scale(data.T).shift(dt, BoundSubject.LOG_LIKELIHOOD)


def expected_cardinality_finite(params: KernelParams, ground: GroundSet) -> float:
    """tr(L (I + L)^{-1}), the expected number of sampled items."""
    return expected_cardinality_matrix(gram(params, ground.items))


def expected_cardinality_matrix(L: np.ndarray) -> float:
    n = L.shape[0]
    K = linalg.solve(np.eye(n) + L, L, assume_a="pos")
    return float(np.trace(K))


__all__ = [
    "LOG_ZERO",
    "Dataset",
    "GroundSet",
    "InducingSet",
    "continuous_loglik_bounds",
    "data_term_continuous",
    "data_term_finite",
    "expected_cardinality_finite",
    "expected_cardinality_matrix",
    "finite_loglik_bounds",
    "finite_loglik_exact",
    "is_log_zero",
    "safe_logdet",
]
