"""Synthetic two-class 2-D point patterns standing in for private multi-sample data.

Each class is an anisotropic Gaussian-Gaussian DPP with a prescribed
overdispersion gamma_d = sigma_d / rho_d and an intensity solved so that the
expected count per sample hits a target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .kernel import GaussianBaseMeasure, KernelParams
from .likelihood import Dataset
from .oracle import GGSpectrum, sample_dpp_continuous_gg
from .streams import SYNTH, substream


@dataclass(frozen=True)
class SurrogateClass:
    name: str
    gamma: tuple[float, ...]
    scales: tuple[float, ...]
    mean_count: float

    def params(self) -> KernelParams:
        return KernelParams(tuple(g * r for g, r in zip(self.gamma, self.scales)))

    def base(self) -> GaussianBaseMeasure:
        return GaussianBaseMeasure(solve_intensity(self.params(), self.scales, self.mean_count),
                                   (0.0,) * len(self.scales), self.scales)


# "normal"-like class is less repulsive than the "severe"-like one by a factor 2 in gamma
DEFAULT_CLASSES = (
    SurrogateClass("normal", (0.1, 0.1), (1.0, 1.5), 90.0),
    SurrogateClass("severe", (0.2, 0.2), (1.0, 1.5), 67.0),
)


def solve_intensity(params: KernelParams, scales, mean_count: float) -> float:
    """kappa such that the expected number of points equals ``mean_count``."""
    zero = (0.0,) * len(scales)

    def excess(log_kappa):
        return GGSpectrum(params, GaussianBaseMeasure(float(np.exp(log_kappa)), zero, scales)).expected_count() - mean_count

    return float(np.exp(optimize.brentq(excess, np.log(mean_count) - 5.0, np.log(mean_count) + 15.0, xtol=1e-10)))


def sample_class(cls: SurrogateClass, n_samples: int, rng: np.random.Generator, n_cells: int = 512) -> Dataset:
    spectrum = GGSpectrum(cls.params(), cls.base())
    patterns = [sample_dpp_continuous_gg(spectrum, rng, n_cells=n_cells) for _ in range(n_samples)]
    return Dataset(patterns, dim=len(cls.scales))


def two_class_surrogate(seed: int, n_samples=(4, 3), classes=DEFAULT_CLASSES) -> dict[str, Dataset]:
    """One dataset per class, all drawn from the ``synth`` sub-stream of ``seed``."""
    rng = substream(seed, SYNTH)
    return {c.name: sample_class(c, n, rng) for c, n in zip(classes, n_samples)}
