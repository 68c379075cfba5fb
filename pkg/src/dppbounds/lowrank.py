"""Nonspectral bounds on DPP normalisers from a set of pseudo-inputs.

Finite case: with Q = L_YZ L_Z^{-1} L_ZY,

    -logdet(Q + I) - tr(L - Q) <= -logdet(L + I) <= -logdet(Q + I).

Continuous case: with Psi_ij = int L(z_i, x) L(x, z_j) dmu(x),

    u - tr(L_op) + tr(L_Z^{-1} Psi) <= -logdet(I + L_op) <= u,
    u = logdet L_Z - logdet(L_Z + Psi).

All determinants are taken from Cholesky factors in log space. Adding jitter
to L_Z only shrinks Q in the PSD order, so jittered bounds stay valid.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .kernel import (
    GaussianBaseMeasure,
    KernelParams,
    NumericError,
    as_points,
    cross_gram,
    gram,
    psi_matrix,
    trace_operator,
)
from .quadrature import QuadratureGrid, make_grid, nodes_for

JITTER_START = 1e-10
JITTER_MAX = 1e-4
MAX_INDUCING = 5000


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, msg: str, jitter: float):
        super().__init__(msg)
        self.jitter = jitter


class BoundSubject(enum.Enum):
    NEG_LOGDET_FINITE = "NegLogDetFinite"
    NEG_LOGDET_CONTINUOUS = "NegLogDetContinuous"
    LOG_LIKELIHOOD = "LogLikelihood"
    LOG_ACCEPTANCE_RATIO = "LogAcceptanceRatio"


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float
    subject: BoundSubject

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise NumericError(f"non-finite bound ({self.lower}, {self.upper})")
        if self.lower > self.upper + 1e-12 * max(1.0, abs(self.upper)):
            raise NumericError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    def shift(self, offset: float, subject: BoundSubject | None = None) -> "BoundPair":
        return BoundPair(self.lower + offset, self.upper + offset, subject or self.subject)

    def scale(self, factor: float, subject: BoundSubject | None = None) -> "BoundPair":
        lo, hi = sorted((self.lower * factor, self.upper * factor))
        return BoundPair(lo, hi, subject or self.subject)

    def intersect(self, other: "BoundPair") -> "BoundPair":
        """Tightest interval implied by two valid bounds on the same quantity."""
        lo, hi = max(self.lower, other.lower), min(self.upper, other.upper)
        if lo > hi:
            # only reachable through round-off; keep the narrower of the two
            return self if self.gap <= other.gap else other
        return BoundPair(lo, hi, self.subject)


class InducingSet:
    """Pseudo-inputs Z, shape ``(m, dim)``, with a relative starting jitter."""

    def __init__(self, Z, jitter: float = JITTER_START, min_separation: float = 1e-12):
        Z = as_points(Z)
        if Z.shape[0] < 1:
            raise ValueError("an inducing set needs at least one point")
        if Z.shape[0] > MAX_INDUCING:
            raise ValueError(f"at most {MAX_INDUCING} inducing points are supported")
        if not np.all(np.isfinite(Z)):
            raise ValueError("inducing points must be finite")
        if jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if Z.shape[0] > 1:
            scale = max(1.0, float(np.ptp(Z, axis=0).max()))
            if min_pairwise_distance(Z) <= min_separation * scale:
                raise ValueError("inducing points must be pairwise distinct")
        Z.setflags(write=False)
        self.Z = Z
        self.jitter = float(jitter)

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def __len__(self):
        return self.m

    def __repr__(self):
        return f"InducingSet(m={self.m}, dim={self.dim}, jitter={self.jitter:g})"


def min_pairwise_distance(Z: np.ndarray) -> float:
    d2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


def _as_inducing(Z) -> InducingSet:
    return Z if isinstance(Z, InducingSet) else InducingSet(Z)


def jittered_cholesky(K: np.ndarray, jitter: float = JITTER_START, max_jitter: float = JITTER_MAX):
    """Lower Cholesky factor of ``K + j * mean(diag K) * I``.

    ``j`` starts at ``jitter`` and grows by 10x up to ``max_jitter``.
    Returns ``(factor, absolute_jitter_used)``.
    """
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    j = jitter
    while True:
        absj = j * scale
        try:
            C = linalg.cholesky(K + absj * np.eye(K.shape[0]), lower=True, check_finite=False)
            if np.all(np.isfinite(C)) and np.all(np.diag(C) > 0):
                return C, absj
        except linalg.LinAlgError:
            pass
        if j >= max_jitter:
            raise FactorizationError(f"matrix not positive definite with relative jitter {j:g}", j)
        j = min(max(10.0 * j, 1e-16), max_jitter) if j > 0 else JITTER_START


def logdet_chol(C: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(C))))


def logdet_identity_plus(S: np.ndarray) -> float:
    """log det(I + S) for symmetric PSD ``S``."""
    if S.shape[0] == 0:
        return 0.0
    C = linalg.cholesky(np.eye(S.shape[0]) + 0.5 * (S + S.T), lower=True, check_finite=False)
    return logdet_chol(C)


@dataclass(frozen=True)
class NystromFactor:
    """Whitened Nystrom factor with Q = V^T V; nothing of size n x n is stored."""

    chol_z: np.ndarray
    V: np.ndarray
    trace_L: float
    trace_Q: float
    logdet_Lz: float
    jitter: float
    amplitude: float = field(default=1.0)

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def m(self) -> int:
        return self.V.shape[0]

    def Q(self) -> np.ndarray:
        """Dense Q; for tests and small problems only."""
        return self.V.T @ self.V


def factorize(params: KernelParams, X, Z) -> NystromFactor:
    """Cholesky-whitened cross-Gram in O(n m^2 + m^3)."""
    Z = _as_inducing(Z)
    X = as_points(X, params.dim)
    if Z.dim != params.dim:
        raise ValueError(f"inducing points have dimension {Z.dim}, kernel {params.dim}")
    C, absj = jittered_cholesky(gram(params, Z.Z), Z.jitter)
    V = linalg.solve_triangular(C, cross_gram(params, Z.Z, X), lower=True, check_finite=False)
    n = X.shape[0]
    return NystromFactor(
        chol_z=C,
        V=V,
        trace_L=params.amplitude * n,
        trace_Q=float(np.einsum("ij,ij->", V, V)),
        logdet_Lz=logdet_chol(C),
        jitter=absj,
        amplitude=params.amplitude,
    )


def neg_logdet_bounds_finite(factor: NystromFactor) -> BoundPair:
    """Bounds on -log det(L + I) from a Nystrom factor."""
    VVt = factor.V @ factor.V.T
    upper = -logdet_identity_plus(VVt)
    gap = max(factor.trace_L - factor.trace_Q, 0.0)
    if not np.isfinite(upper):
        raise NumericError("non-finite log determinant")
    return BoundPair(upper - gap, upper, BoundSubject.NEG_LOGDET_FINITE)


@dataclass(frozen=True)
class ContinuousTerms:
    """m x m quantities behind the continuous bounds.

    ``M = C^{-1} Psi C^{-T}`` with ``C`` the jittered Cholesky factor of L_Z,
    so that logdet(L_Z + Psi) - logdet L_Z = logdet(I + M) and
    tr(L_Z^{-1} Psi) = tr(M).

    With ``psi="quadrature"``, Psi is represented as R R^T with
    R_ig = sqrt(w_g) L(z_i, x_g) on a Gauss-Legendre grid and M is formed as
    (C^{-1} R)(C^{-1} R)^T. The bounds are then exact for the discretised
    measure, and round-off enters only at second order. The closed form is
    faster but its entrywise rounding is amplified by the near-null space of
    an ill-conditioned L_Z.
    """

    chol_z: np.ndarray
    psi: np.ndarray
    M: np.ndarray
    chol_iM: np.ndarray
    trace_op: float
    jitter: float
    grid: QuadratureGrid | None = None
    R: np.ndarray | None = None

    @property
    def upper(self) -> float:
        return -logdet_chol(self.chol_iM)

    @property
    def trace_q(self) -> float:
        return float(np.trace(self.M))

    @property
    def gap(self) -> float:
        return max(self.trace_op - self.trace_q, 0.0)

    @property
    def lower(self) -> float:
        return self.upper - self.gap


PSI_METHODS = ("quadrature", "analytic")


def continuous_terms(params: KernelParams, base: GaussianBaseMeasure, Z, psi: str = "quadrature",
                     n_nodes=None) -> ContinuousTerms:
    if psi not in PSI_METHODS:
        raise ValueError(f"psi must be one of {PSI_METHODS}, got {psi!r}")
    Z = _as_inducing(Z)
    if Z.dim != params.dim or base.dim != params.dim:
        raise ValueError("kernel, base measure and inducing points disagree on dimension")
    C, absj = jittered_cholesky(gram(params, Z.Z), Z.jitter)
    grid = R = None
    if psi == "analytic":
        P = psi_matrix(params, base, Z.Z)
        W = linalg.solve_triangular(C, P, lower=True, check_finite=False)
        M = linalg.solve_triangular(C, W.T, lower=True, check_finite=False)
        trace_op = trace_operator(params, base)
    else:
        grid = make_grid(base, nodes_for(params, base) if n_nodes is None else n_nodes)
        R = cross_gram(params, Z.Z, grid.nodes) * np.sqrt(grid.weights)
        B = linalg.solve_triangular(C, R, lower=True, check_finite=False)
        M = B @ B.T
        P = R @ R.T
        trace_op = params.amplitude * float(grid.weights.sum())
    M = 0.5 * (M + M.T)
    if not np.all(np.isfinite(M)):
        raise NumericError("non-finite whitened Psi")
    chol_iM = linalg.cholesky(np.eye(M.shape[0]) + M, lower=True, check_finite=False)
    return ContinuousTerms(C, P, M, chol_iM, trace_op, absj, grid, R)


def neg_logdet_bounds_continuous(params: KernelParams, base: GaussianBaseMeasure, Z,
                                 psi: str = "quadrature") -> BoundPair:
    """Bounds on -log det(I + L_op) for the Gaussian kernel / Gaussian measure pair."""
    if base.intensity == 0:
        return BoundPair(0.0, 0.0, BoundSubject.NEG_LOGDET_CONTINUOUS)
    t = continuous_terms(params, base, Z, psi)
    upper = t.upper
    if not np.isfinite(upper):
        raise NumericError("non-finite log determinant")
    return BoundPair(upper - t.gap, upper, BoundSubject.NEG_LOGDET_CONTINUOUS)


def bound_gap(*args, psi: str = "quadrature") -> float:
    """upper - lower of the normaliser bounds.

    Call as ``bound_gap(factor)`` for the finite case or
    ``bound_gap(params, base, Z)`` for the continuous one.
    """
    if len(args) == 1 and isinstance(args[0], NystromFactor):
        f = args[0]
        return max(f.trace_L - f.trace_Q, 0.0)
    if len(args) == 3:
        return continuous_terms(*args, psi=psi).gap
    raise TypeError("bound_gap takes a NystromFactor or (params, base, Z)")


def continuous_lower_grad(params: KernelParams, base: GaussianBaseMeasure, Z, psi: str = "quadrature"):
    """Lower bound on -logdet(I + L_op) and its gradients.

    Returns ``(value, upper, grad_Z, grad_theta)`` where ``grad_Z`` has the
    shape of Z and ``grad_theta`` is a dict with keys ``log_kappa``,
    ``log_sigma``, ``log_rho``, ``mean`` (arrays of length dim for the last
    three). Jitter and quadrature node counts are held fixed, so this is the
    gradient of the quantity actually evaluated.
    """
    Zs = _as_inducing(Z)
    Zp = Zs.Z
    t = continuous_terms(params, base, Zs, psi)
    m = Zp.shape[0]
    sig2 = params.sigma**2

    # with B = M (I+M)^{-1} = I - (I+M)^{-1}:  dF/dPsi = C^{-T} B C^{-1},  dF/dA = -C^{-T} M B C^{-1},
    # and M B = M - B, so both are congruences of symmetric matrices by C^{-1}
    inv_iM, info = lapack.dpotri(t.chol_iM, lower=1)
    if info != 0:
        raise NumericError("inverse of I + M failed")
    inv_iM = np.tril(inv_iM) + np.tril(inv_iM, -1).T
    B = np.eye(m) - inv_iM

    def congruence(X):
        Y = linalg.solve_triangular(t.chol_z, X, lower=True, trans="T", check_finite=False)
        Y = linalg.solve_triangular(t.chol_z, Y.T, lower=True, trans="T", check_finite=False)
        return 0.5 * (Y + Y.T)

    G_psi = congruence(B)
    G_A = -congruence(t.M - B)

    d = Zp.shape[1]
    GA = G_A * gram(params, Zp)
    grad_Z = np.zeros_like(Zp)
    g_logsig = np.zeros(d)
    g_logrho = np.zeros(d)
    g_mean = np.zeros(d)
    if psi == "analytic":
        GP = G_psi * t.psi
        rho2 = base.rho**2
        s = sig2 + 2.0 * rho2
    else:
        R = t.R
        HR = (G_psi @ R) * R  # (m, G): sum_j G_ij R_jg, times R_ig
    # one axis at a time keeps every temporary m x m; first-argument partials are doubled for symmetry
    for k in range(d):
        z = Zp[:, k]
        diff = z[:, None] - z[None, :]
        diff2 = diff**2
        grad_Z[:, k] = -2.0 * np.einsum("ij,ij->i", GA, diff) / sig2[k]
        g_logsig[k] = np.einsum("ij,ij->", GA, diff2) / sig2[k]
        if psi == "analytic":
            dev = base.mu[k] - 0.5 * (z[:, None] + z[None, :])
            dev2 = dev**2
            grad_Z[:, k] += 2.0 * (np.einsum("ij,ij->i", GP, dev) / s[k]
                                   - 0.5 * np.einsum("ij,ij->i", GP, diff) / sig2[k])
            sum_gp, sum_dev2 = GP.sum(), np.einsum("ij,ij->", GP, dev2)
            g_logsig[k] += ((1.0 - sig2[k] / s[k]) * sum_gp + 0.5 * np.einsum("ij,ij->", GP, diff2) / sig2[k]
                            + 2.0 * sig2[k] * sum_dev2 / s[k] ** 2)
            g_logrho[k] = -2.0 * rho2[k] / s[k] * sum_gp + 4.0 * rho2[k] * sum_dev2 / s[k] ** 2
            g_mean[k] = -2.0 * np.einsum("ij,ij->", GP, dev) / s[k]
        else:
            D = t.grid.nodes[None, :, k] - z[:, None]  # x_g - z_i
            HD = np.einsum("ig,ig->i", HR, D)
            grad_Z[:, k] += 2.0 * HD / sig2[k]
            g_logsig[k] += 2.0 * np.einsum("ig,ig->", HR, D**2) / sig2[k]
            g_mean[k] = -2.0 * HD.sum() / sig2[k]
            g_logrho[k] = -2.0 * np.einsum("ig,ig,g->", HR, D, t.grid.std_nodes[:, k]) * base.rho[k] / sig2[k]
    g_logkappa = float(np.sum(G_psi * t.psi)) - t.trace_op

    value = t.upper - t.trace_op + t.trace_q
    grads = {"log_kappa": g_logkappa, "log_sigma": g_logsig, "log_rho": g_logrho, "mean": g_mean}
    return value, t.upper, grad_Z, grads
