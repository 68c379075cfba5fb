"""Tensor Gauss-Legendre rules for Gaussian base measures."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .kernel import GaussianBaseMeasure, KernelParams

SPAN = 8.0
NODES_PER_RATIO = 56.0
MIN_NODES = 64
MAX_NODES_1D = 4096


@dataclass(frozen=True)
class QuadratureGrid:
    """Nodes ``x_g = mean + rho * t_g`` with weights that already include the base density.

    ``std_nodes`` holds the standardised ``t_g``; the weights sum to about
    kappa (the mass outside mean +- span*rho is below 1e-15).
    """

    nodes: np.ndarray
    weights: np.ndarray
    std_nodes: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


@lru_cache(maxsize=64)
def _std_rule(n_nodes: int, span: float):
    t, w = leggauss(n_nodes)
    t = span * t
    w = w * span * np.exp(-0.5 * t**2) / np.sqrt(2.0 * np.pi)
    return t, w


def make_grid(base: GaussianBaseMeasure, n_nodes, span: float = SPAN) -> QuadratureGrid:
    """Tensor rule over mean_d +- span*rho_d; ``n_nodes`` is an int or one count per axis."""
    counts = np.broadcast_to(np.asarray(n_nodes, dtype=int), (base.dim,))
    rules = [_std_rule(int(n), span) for n in counts]
    tmesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    t = np.stack([g.ravel() for g in tmesh], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
    return QuadratureGrid(base.mu + base.rho * t, base.intensity * w, t)


def nodes_for(params: KernelParams, base: GaussianBaseMeasure, span: float = SPAN) -> list[int]:
    """Per-axis node count resolving the kernel width over mean +- span*rho."""
    ratio = base.rho / params.sigma
    n = np.ceil(NODES_PER_RATIO * (span / SPAN) * ratio).astype(int)
    return [int(v) for v in np.clip(n, MIN_NODES, MAX_NODES_1D)]
