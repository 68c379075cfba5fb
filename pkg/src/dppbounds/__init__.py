"""Likelihood bounds, variational fitting and exact MCMC for determinantal point processes.

The normalising determinant of a DPP (det(L + I) for a finite ground set,
the Fredholm determinant det(I + L_op) on R^d) is replaced by cheap lower and
upper bounds built from a Nystrom approximation through m pseudo-inputs.
"""
from .kernel import GaussianBaseMeasure, KernelParams, cross_gram, eval_kernel, gram, psi_matrix, trace_operator
from .likelihood import (
    LOG_ZERO,
    Dataset,
    GroundSet,
    continuous_loglik_bounds,
    expected_cardinality_finite,
    finite_loglik_bounds,
    finite_loglik_exact,
)
from .lowrank import (
    BoundPair,
    BoundSubject,
    FactorizationError,
    InducingSet,
    bound_gap,
    factorize,
    neg_logdet_bounds_continuous,
    neg_logdet_bounds_finite,
)
from .mcmc import MCMCConfig, PriorBox, retrospective_accept, run_mh
from .vi import VIConfig, fit_vi, init_inducing, overdispersion, vi_objective

__version__ = "0.1.0"

__all__ = [
    "BoundPair",
    "BoundSubject",
    "Dataset",
    "FactorizationError",
    "GaussianBaseMeasure",
    "GroundSet",
    "InducingSet",
    "KernelParams",
    "LOG_ZERO",
    "MCMCConfig",
    "PriorBox",
    "VIConfig",
    "bound_gap",
    "continuous_loglik_bounds",
    "cross_gram",
    "eval_kernel",
    "expected_cardinality_finite",
    "factorize",
    "finite_loglik_bounds",
    "finite_loglik_exact",
    "fit_vi",
    "gram",
    "init_inducing",
    "neg_logdet_bounds_continuous",
    "neg_logdet_bounds_finite",
    "overdispersion",
    "psi_matrix",
    "retrospective_accept",
    "run_mh",
    "trace_operator",
    "vi_objective",
]
