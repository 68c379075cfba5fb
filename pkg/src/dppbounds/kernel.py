"""Squared-exponential L-kernels and Gaussian base measures.

Everything in this module is a pure function of its inputs. Point sets are
plain ``(n, dim)`` float arrays; a 1-D array of length ``n`` is accepted as a
set of ``n`` one-dimensional points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


class DimensionError(ValueError):
    """Raised when points and parameters disagree on the dimension."""


class NumericError(ArithmeticError):
    """Raised when a computation produces a non-finite value."""


def as_points(X, dim: int | None = None) -> np.ndarray:
    """Coerce ``X`` into an ``(n, dim)`` float array.

    A 1-D input is read as ``n`` one-dimensional points when ``dim`` is 1 or
    unknown, and as a single point when ``dim`` equals its length.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        if dim is not None and dim > 1 and X.shape[0] == dim:
            X = X.reshape(1, dim)
        else:
            X = X.reshape(-1, 1)
    elif X.ndim != 2:
        raise DimensionError(f"expected a 2-D point array, got shape {X.shape}")
    if X.shape[0] == 0 and dim is not None:
        X = X.reshape(0, dim)
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"points have dimension {X.shape[1]}, expected {dim}")
    return X


@dataclass(frozen=True)
class KernelParams:
    """Parameters of L(x, y) = amplitude * exp(-sum_d (x_d - y_d)^2 / (2 sigma_d^2))."""

    lengthscales: tuple[float, ...]
    amplitude: float = 1.0

    def __post_init__(self):
        ls = tuple(float(s) for s in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        if len(ls) < 1:
            raise ValueError("need at least one lengthscale")
        if not all(np.isfinite(s) and s > 0 for s in ls):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.lengthscales)

    @classmethod
    def isotropic(cls, sigma: float, dim: int = 1, amplitude: float = 1.0) -> "KernelParams":
        return cls((float(sigma),) * dim, amplitude)

    @classmethod
    def from_eps(cls, eps: float, dim: int = 1) -> "KernelParams":
        """Kernel exp(-eps^2 |x - y|^2), i.e. unit amplitude and sigma = 1/(eps sqrt 2)."""
        return cls.isotropic(eps_to_sigma(eps), dim)

    def to_eps(self) -> float:
        if len(set(self.lengthscales)) != 1 or self.amplitude != 1.0:
            raise ValueError("eps form needs an isotropic, unit-amplitude kernel")
        return sigma_to_eps(self.lengthscales[0])


def eps_to_sigma(eps: float) -> float:
    return 1.0 / (eps * np.sqrt(2.0))


def sigma_to_eps(sigma: float) -> float:
    return 1.0 / (sigma * np.sqrt(2.0))


@dataclass(frozen=True)
class GaussianBaseMeasure:
    """Base measure with density kappa * prod_d Normal(x_d | mean_d, scale_d^2)."""

    intensity: float
    means: tuple[float, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        means = tuple(float(v) for v in np.atleast_1d(self.means))
        scales = tuple(float(v) for v in np.atleast_1d(self.scales))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "intensity", float(self.intensity))
        if len(means) != len(scales) or len(means) < 1:
            raise ValueError("means and scales must have the same nonzero length")
        if not all(np.isfinite(s) and s > 0 for s in scales):
            raise ValueError(f"scales must be positive, got {scales}")
        if not all(np.isfinite(v) for v in means):
            raise ValueError("means must be finite")
        # intensity 0 is allowed as the vanishing-operator limit
        if not (np.isfinite(self.intensity) and self.intensity >= 0):
            raise ValueError(f"intensity must be nonnegative, got {self.intensity}")

    @property
    def dim(self) -> int:
        return len(self.means)

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.means)

    @property
    def rho(self) -> np.ndarray:
        return np.asarray(self.scales)

    def with_intensity(self, intensity: float) -> "GaussianBaseMeasure":
        return GaussianBaseMeasure(intensity, self.means, self.scales)

    @classmethod
    def from_kappa_alpha(cls, kappa: float, alpha: float, convention: str = "variance") -> "GaussianBaseMeasure":
        """1-D centred base measure of the toy Gaussian experiment.

        ``convention="variance"`` reads (2 alpha)^-2 as the variance, so the
        scale is 1/(2 alpha). ``convention="fasshauer"`` uses the weight
        exp(-alpha^2 x^2) instead, i.e. scale 1/(alpha sqrt 2).
        """
        if convention == "variance":
            rho = 1.0 / (2.0 * alpha)
        elif convention == "fasshauer":
            rho = 1.0 / (alpha * np.sqrt(2.0))
        else:
            raise ValueError(f"unknown convention {convention!r}")
        return cls(kappa, (0.0,), (rho,))


def _check_dim(params: KernelParams, dim: int):
    if params.dim != dim:
        raise DimensionError(f"kernel has dimension {params.dim}, points have {dim}")


def _sq_scaled_dists(X: np.ndarray, Y: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    Xs = X / sigma
    Ys = Y / sigma
    d2 = (Xs**2).sum(1)[:, None] + (Ys**2).sum(1)[None, :] - 2.0 * Xs @ Ys.T
    return np.maximum(d2, 0.0)


def eval_kernel(params: KernelParams, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (params.dim,) or y.shape != (params.dim,):
        raise DimensionError(f"points must have shape ({params.dim},)")
    r = (x - y) / params.sigma
    return params.amplitude * float(np.exp(-0.5 * r @ r))


def cross_gram(params: KernelParams, X, Z) -> np.ndarray:
    """Matrix of L(x_i, z_j), shape ``(len(X), len(Z))``."""
    X = as_points(X, params.dim)
    Z = as_points(Z, params.dim)
    if X.shape[0] == 0 or Z.shape[0] == 0:
        return np.zeros((X.shape[0], Z.shape[0]))
    # exact differences for small problems keep the diagonal exactly a_L
    if X.shape[0] * Z.shape[0] * params.dim <= 4_000_000:
        diff = (X[:, None, :] - Z[None, :, :]) / params.sigma
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    else:
        d2 = _sq_scaled_dists(X, Z, params.sigma)
    return params.amplitude * np.exp(-0.5 * d2)


def gram(params: KernelParams, X) -> np.ndarray:
    X = as_points(X, params.dim)
    K = cross_gram(params, X, X)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, params.amplitude)
    return K


def psi_matrix(params: KernelParams, base: GaussianBaseMeasure, Z) -> np.ndarray:
    """Closed-form Psi_ij = int L(z_i, x) L(x, z_j) dmu(x) for the Gaussian-Gaussian pair."""
    _check_dim(params, base.dim)
    Z = as_points(Z, params.dim)
    sig2 = params.sigma**2
    rho2 = base.rho**2
    s = sig2 + 2.0 * rho2
    diff = Z[:, None, :] - Z[None, :, :]
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])
    expo = -0.25 * diff**2 / sig2 - (base.mu - zbar) ** 2 / s
    log_c = 0.5 * np.sum(np.log(sig2 / s))
    P = params.amplitude**2 * base.intensity * np.exp(expo.sum(-1) + log_c)
    if not np.all(np.isfinite(P)):
        raise NumericError("non-finite entry in Psi")
    return 0.5 * (P + P.T)


def trace_operator(params: KernelParams, base: GaussianBaseMeasure) -> float:
    """tr of the integral operator: the diagonal a_L integrated against a mass-kappa measure."""
    return params.amplitude * base.intensity


def base_log_density(base: GaussianBaseMeasure, x) -> np.ndarray | float:
    """log kappa + sum_d log Normal(x_d | mean_d, scale_d^2); vectorised over rows."""
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1 and (base.dim > 1 or X.ndim == 0)
    X = as_points(X, base.dim)
    z = (X - base.mu) / base.rho
    out = np.log(base.intensity) - 0.5 * (z**2).sum(1) - np.sum(np.log(base.rho)) - 0.5 * base.dim * LOG_2PI
    return float(out[0]) if single else out
