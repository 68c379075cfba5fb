"""Run configuration documents for the command-line tool.

A config is a YAML mapping validated by one pydantic model per command.
Unknown keys are rejected. Every field has a default, so an empty document
is a valid config, and command-line flags override file values.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from .kernel import GaussianBaseMeasure, KernelParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ToyModel(_Strict):
    """1-D kernel exp(-eps^2 (x-y)^2) with base measure kappa * Normal(0, rho^2), rho from alpha."""

    kappa: float = Field(1000.0, ge=0)
    alpha: PositiveFloat = 0.5
    eps: PositiveFloat = 1.0
    convention: Literal["variance", "fasshauer"] = "variance"


class GeneralModel(_Strict):
    lengthscales: list[PositiveFloat]
    amplitude: PositiveFloat = 1.0
    intensity: float = Field(1.0, ge=0)
    means: list[float] | None = None
    scales: list[PositiveFloat] | None = None

    @model_validator(mode="after")
    def _dims(self):
        d = len(self.lengthscales)
        if d == 0:
            raise ValueError("lengthscales must be nonempty")
        for name in ("means", "scales"):
            v = getattr(self, name)
            if v is not None and len(v) != d:
                raise ValueError(f"{name} must have {d} entries to match lengthscales")
        return self


class ModelSpec(_Strict):
    """Either the 1-D ``toy`` parametrisation or a ``general`` anisotropic model."""

    toy: ToyModel | None = None
    general: GeneralModel | None = None

    @model_validator(mode="after")
    def _one(self):
        if self.toy is not None and self.general is not None:
            raise ValueError("give either model.toy or model.general, not both")
        if self.toy is None and self.general is None:
            self.toy = ToyModel()
        return self

    def resolve(self) -> tuple[KernelParams, GaussianBaseMeasure]:
        if self.toy is not None:
            t = self.toy
            return KernelParams.from_eps(t.eps), GaussianBaseMeasure.from_kappa_alpha(t.kappa, t.alpha, t.convention)
        g = self.general
        d = len(g.lengthscales)
        base = GaussianBaseMeasure(g.intensity, tuple(g.means or [0.0] * d), tuple(g.scales or [1.0] * d))
        return KernelParams(tuple(g.lengthscales), g.amplitude), base


class CommonConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    out: str = "."


class SynthConfig(CommonConfig):
    mode: Literal["continuous", "finite", "two_class"] = "continuous"
    model: ModelSpec = ModelSpec()
    samples: PositiveInt = 1
    ground_set: str | None = None
    output: str = "patterns.csv"
    class_samples: list[PositiveInt] = [4, 3]

    @model_validator(mode="after")
    def _ground(self):
        if self.mode == "finite" and not self.ground_set:
            raise ValueError("finite mode needs ground_set")
        return self


class BoundsConfig(CommonConfig):
    data: str | None = None
    ground_set: str | None = None
    samples: PositiveInt = 1
    model: ModelSpec = ModelSpec()
    m: list[PositiveInt] = [5, 10, 20, 40, 80]
    refine_iters: int = Field(0, ge=0)
    psi: Literal["quadrature", "analytic"] = "quadrature"
    exact: bool = True
    output: str = "bounds.csv"


class FitVIConfig(CommonConfig):
    data: str
    ground_set: str | None = None
    m: PositiveInt = 50
    init_strategy: Literal["QuantileGrid", "KMeansPlusPlus", "RandomSubset"] = "QuantileGrid"
    optimizer: Literal["EvolutionStrategy", "FiniteDiffGradient", "AnalyticGradient"] = "EvolutionStrategy"
    max_iters: PositiveInt = 1000
    tol: PositiveFloat | None = None
    schedule: Literal["alternate", "joint"] = "alternate"
    inner_iters: PositiveInt = 20
    psi: Literal["quadrature", "analytic"] = "quadrature"
    fit_mean: bool = False


class PriorSpec(_Strict):
    names: list[str] = ["log_kappa", "log_alpha", "log_eps"]
    lower: list[float] = [200.0, -10.0, -10.0]
    upper: list[float] = [2000.0, 10.0, 10.0]
    on_exp: list[bool] = [True, False, False]


class FitMCMCConfig(CommonConfig):
    data: str
    convention: Literal["variance", "fasshauer"] = "variance"
    psi: Literal["quadrature", "analytic"] = "quadrature"
    prior: PriorSpec = PriorSpec()
    theta0: list[float] | None = None
    mode: Literal["retrospective", "ideal"] = "retrospective"
    n_iters: PositiveInt = 10_000
    burn_in: int = Field(1_000, ge=0)
    m0: PositiveInt = 20
    m_step: PositiveInt = 10
    m_max: PositiveInt = 200
    z_budget: PositiveInt = 20
    target_accept: float = Field(0.25, gt=0, lt=1)
    check_exact: bool = False
    output: str = "chain.csv"


class PlotConfig(CommonConfig):
    chain: str | None = None
    bounds: str | None = None
    data: str | None = None
    inducing: str | None = None
    model: ModelSpec | None = None
    prior: PriorSpec | None = None
    burn_in: int = Field(0, ge=0)
    bins: PositiveInt = 20


COMMANDS: dict[str, type[CommonConfig]] = {
    "synth": SynthConfig,
    "bounds": BoundsConfig,
    "fit-vi": FitVIConfig,
    "fit-mcmc": FitMCMCConfig,
    "plot": PlotConfig,
}


def load_config(command: str, path=None, overrides: dict | None = None) -> CommonConfig:
    """Read ``path`` (YAML mapping) if given, apply non-None ``overrides`` (dotted keys allowed), validate."""
    doc = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = key.split(".")
        node = doc
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot set {key}: {p} is not a mapping")
        node[leaf] = value
    return COMMANDS[command].model_validate(doc)
