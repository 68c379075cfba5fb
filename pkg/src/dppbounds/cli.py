"""``dpp`` command-line tool: synth | bounds | fit-vi | fit-mcmc | plot.

Each command reads one YAML config (``--config``), applies flag overrides
(``--seed``, ``--out``, repeated ``--set key=value``) and writes its outputs
under ``--out``. Failures exit with status 2 and a single stderr line that
starts with ``error:``.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import io
from .config import BoundsConfig, FitMCMCConfig, FitVIConfig, PlotConfig, SynthConfig, load_config
from .kernel import NumericError, gram
from .likelihood import DENSE_LIMIT, Dataset, GroundSet, continuous_loglik_bounds, finite_loglik_bounds, finite_loglik_exact
from .lowrank import FactorizationError
from .mcmc import GaussianToyTarget, MCMCConfig, PriorBox, run_mh
from .oracle import GGSpectrum, OracleError, exact_loglik_continuous, sample_dpp_continuous_gg, sample_dpp_finite
from .streams import SYNTH, substream
from .surrogate import DEFAULT_CLASSES, sample_class
from .svgplot import Figure
from .vi import VIConfig, VIError, fit_vi, place_inducing

log = logging.getLogger("dppbounds")


def _out(cfg, name: str) -> Path:
    return Path(cfg.out) / name


def _items_to_indices(points: np.ndarray, ground: GroundSet) -> np.ndarray:
    lookup = {tuple(row): i for i, row in enumerate(ground.items.tolist())}
    try:
        return np.array(sorted(lookup[tuple(p)] for p in points.tolist()), dtype=int)
    except KeyError as exc:
        raise ValueError(f"pattern point {exc.args[0]} is not a ground-set item") from None


def load_dataset(data_path, ground_path=None) -> Dataset:
    _, patterns = io.read_patterns(data_path)
    if not patterns:
        raise ValueError(f"{data_path}: no points; at least one nonempty sample is needed")
    if ground_path is None:
        return Dataset(patterns, dim=patterns[0].shape[1])
    ground = GroundSet(io.read_points(ground_path))
    return Dataset([_items_to_indices(p, ground) for p in patterns], ground=ground)


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: SynthConfig) -> list[Path]:
    rng = substream(cfg.seed, SYNTH)
    if cfg.mode == "two_class":
        written = []
        for cls, n in zip(DEFAULT_CLASSES, cfg.class_samples):
            data = sample_class(cls, n, rng)
            written.append(io.write_patterns(_out(cfg, f"{cls.name}.csv"), data.patterns, dim=data.dim))
            print(f"{cls.name}: gamma={list(cls.gamma)} counts={data.counts().tolist()} expected={cls.mean_count:g}")
        return written
    params, base = cfg.model.resolve()
    if cfg.mode == "finite":
        ground = GroundSet(io.read_points(cfg.ground_set))
        if params.dim != ground.dim:
            params = type(params)(tuple(np.resize(params.lengthscales, ground.dim)), params.amplitude)
        L = gram(params, ground.items)
        patterns = [ground.items[sample_dpp_finite(L, rng)] for _ in range(cfg.samples)]
        lam = np.clip(np.linalg.eigvalsh(L), 0, None)
        expected = float(np.sum(lam / (1 + lam)))
        dim = ground.dim
    else:
        spectrum = GGSpectrum(params, base)
        patterns = [sample_dpp_continuous_gg(spectrum, rng) for _ in range(cfg.samples)]
        expected = spectrum.expected_count()
        dim = base.dim
    path = io.write_patterns(_out(cfg, cfg.output), patterns, dim=dim)
    print(f"expected count {expected:.4f}; realized {[len(p) for p in patterns]}")
    return [path]


def cmd_bounds(cfg: BoundsConfig) -> Path:
    params, base = cfg.model.resolve()
    rows = []
    if cfg.ground_set is not None:
        ground = GroundSet(io.read_points(cfg.ground_set))
        data = (load_dataset(cfg.data, cfg.ground_set) if cfg.data
                else Dataset([[]] * cfg.samples, ground=ground))
        from sklearn.cluster import kmeans_plusplus

        _, order = kmeans_plusplus(ground.items, ground.n, random_state=cfg.seed)
        exact = finite_loglik_exact(params, data) if cfg.exact and ground.n <= DENSE_LIMIT else None
        for m in cfg.m:
            if m > ground.n:
                raise ValueError(f"m={m} exceeds the ground-set size {ground.n}")
            t0 = time.perf_counter()
            b = finite_loglik_bounds(params, data, ground.items[order[:m]])
            rows.append([m, b.lower, b.upper, b.gap, "" if exact is None else exact, time.perf_counter() - t0])
    else:
        data = (load_dataset(cfg.data) if cfg.data
                else Dataset([np.zeros((0, base.dim))] * cfg.samples, dim=base.dim))
        exact = None
        if cfg.exact:
            try:
                exact = exact_loglik_continuous(params, base, data)
            except OracleError as exc:
                log.warning("no exact value: %s", exc)
        for m in cfg.m:
            t0 = time.perf_counter()
            Z = place_inducing(params, base, m, refine_iters=cfg.refine_iters, psi=cfg.psi)
            b = continuous_loglik_bounds(params, base, data, Z, psi=cfg.psi)
            rows.append([m, b.lower, b.upper, b.gap, "" if exact is None else exact, time.perf_counter() - t0])
    for r in rows:
        print(f"m={r[0]}: [{r[1]:.8g}, {r[2]:.8g}] gap={r[3]:.4g}")
    return io.write_table(_out(cfg, cfg.output), ["m", "lower", "upper", "gap", "exact", "seconds"], rows)


def cmd_fit_vi(cfg: FitVIConfig) -> list[Path]:
    data = load_dataset(cfg.data, cfg.ground_set)
    vcfg = VIConfig(m=cfg.m, init_strategy=cfg.init_strategy, optimizer=cfg.optimizer, max_iters=cfg.max_iters,
                    tol=cfg.tol, schedule=cfg.schedule, inner_iters=cfg.inner_iters, psi=cfg.psi,
                    fit_mean=cfg.fit_mean, seed=cfg.seed)
    res = fit_vi(data, vcfg)
    summary = {
        "objective": res.objective,
        "lower": res.bounds.lower,
        "upper": res.bounds.upper,
        "amplitude": res.params.amplitude,
        "lengthscales": res.params.lengthscales,
        "iterations": res.n_iter,
        "converged": res.converged,
        "wall_time": res.wall_time,
    }
    if res.base is not None:
        summary.update(intensity=res.base.intensity, means=res.base.means, scales=res.base.scales, gamma=res.gamma)
    paths = [
        io.write_table(_out(cfg, "trace.csv"), ["sweep", "objective"], enumerate(res.trace)),
        io.write_points(_out(cfg, "inducing.csv"), res.Z.Z),
        io.write_summary(_out(cfg, "summary.txt"), summary),
    ]
    print(f"F={res.objective:.8g} after {res.n_iter} sweeps; gamma={None if res.gamma is None else res.gamma.tolist()}")
    return paths


def cmd_fit_mcmc(cfg: FitMCMCConfig) -> list[Path]:
    data = load_dataset(cfg.data)
    prior = PriorBox(tuple(cfg.prior.names), tuple(cfg.prior.lower), tuple(cfg.prior.upper), tuple(cfg.prior.on_exp))
    target = GaussianToyTarget(data, cfg.convention, cfg.psi, cfg.z_budget)
    if cfg.theta0 is None:
        mid = 0.5 * (np.array(prior.lower) + np.array(prior.upper))
        theta0 = np.where(prior.on_exp, np.log(np.where(prior.on_exp, mid, 1.0)), mid)
    else:
        theta0 = np.array(cfg.theta0, dtype=float)
    mcfg = MCMCConfig(n_iters=cfg.n_iters, burn_in=cfg.burn_in, m0=cfg.m0, m_step=cfg.m_step, m_max=cfg.m_max,
                      target_accept=cfg.target_accept, check_exact=cfg.check_exact, seed=cfg.seed)
    trace = run_mh(target, prior, mcfg, theta0, mode=cfg.mode)
    summary = trace.summary()
    summary["m_histogram"] = " ".join(f"{k}:{v}" for k, v in trace.m_histogram().items())
    if cfg.check_exact:
        summary["exact_mismatches"] = trace.mismatches()
    post = trace.posterior()
    for i, name in enumerate(prior.names):
        summary[f"mean_{name}"] = float(post[:, i].mean())
    paths = [io.write_table(_out(cfg, cfg.output), trace.columns(), trace.rows()),
             io.write_summary(_out(cfg, "chain_summary.txt"), summary)]
    print(f"acceptance {summary['acceptance_rate']:.3f}, max m {summary['max_m']}, fallbacks {summary['fallbacks']}")
    return paths


def _prior_density(prior: PriorBox, i: int, grid: np.ndarray) -> np.ndarray:
    lo, hi = prior.lower[i], prior.upper[i]
    if prior.on_exp[i]:
        x = np.exp(grid)
        return np.where((x >= lo) & (x <= hi), x / (hi - lo), 0.0)
    return np.where((grid >= lo) & (grid <= hi), 1.0 / (hi - lo), 0.0)


def cmd_plot(cfg: PlotConfig) -> list[Path]:
    written = []
    if cfg.chain:
        header, rows = io.read_table(cfg.chain)
        cols = [c for c in header if c.startswith("theta_")]
        A = np.array([[float(r[header.index(c)]) for c in cols] for r in rows]).reshape(-1, len(cols))
        it = np.arange(1, A.shape[0] + 1)
        prior = None
        if cfg.prior is not None:
            p = cfg.prior
            prior = PriorBox(tuple(p.names), tuple(p.lower), tuple(p.upper), tuple(p.on_exp))
        for i, c in enumerate(cols):
            name = prior.names[i] if prior is not None and i < prior.dim else c
            fig = Figure(title=f"trace of {name}", xlabel="iteration", ylabel=name).line(it, A[:, i], width=0.8)
            written.append(fig.save(_out(cfg, f"trace_{c}.svg")))
            v = A[cfg.burn_in:, i]
            h, edges = np.histogram(v, bins=cfg.bins, density=True)
            fig = Figure(title=f"marginal of {name}", xlabel=name, ylabel="density").bars(edges, h, label="posterior")
            if prior is not None and i < prior.dim:
                g = np.linspace(edges[0], edges[-1], 200)
                fig.line(g, _prior_density(prior, i, g), label="prior", color="#d62728")
            written.append(fig.save(_out(cfg, f"hist_{c}.svg")))
    if cfg.bounds:
        header, rows = io.read_table(cfg.bounds)
        col = {c: i for i, c in enumerate(header)}
        m = np.array([float(r[col["m"]]) for r in rows])
        fig = Figure(title="log-likelihood bounds", xlabel="m", ylabel="log-likelihood")
        fig.line(m, [float(r[col["upper"]]) for r in rows], label="upper", color="#d62728")
        fig.line(m, [float(r[col["lower"]]) for r in rows], label="lower", color="#1f77b4")
        if all(r[col["exact"]] for r in rows):
            fig.line(m, [float(r[col["exact"]]) for r in rows], label="exact", color="#333", dash="4 3")
        written.append(fig.save(_out(cfg, "bounds.svg")))
    if cfg.data or cfg.inducing:
        Z = io.read_points(cfg.inducing) if cfg.inducing else None
        patterns = io.read_patterns(cfg.data)[1] if cfg.data else []
        X = np.concatenate(patterns) if patterns else np.zeros((0, Z.shape[1] if Z is not None else 1))
        fig = Figure(title="data and pseudo-inputs")
        if X.shape[1] >= 2:
            fig.points(X[:, 0], X[:, 1], label="data", radius=2)
            if Z is not None:
                fig.points(Z[:, 0], Z[:, 1], label="pseudo-inputs", color="#d62728", radius=3, marker="cross")
            fig.xlabel, fig.ylabel = "x1", "x2"
        else:
            fig.points(X[:, 0], np.zeros(len(X)), label="data")
            if Z is not None:
                fig.points(Z[:, 0], np.zeros(len(Z)), label="pseudo-inputs", color="#d62728", radius=4, marker="cross")
            if cfg.model is not None:
                params, base = cfg.model.resolve()
                lo, hi = base.mu[0] - 4 * base.rho[0], base.mu[0] + 4 * base.rho[0]
                g = np.linspace(lo, hi, 400)
                fig.line(g, GGSpectrum(params, base).single_point_marginal(g[:, None]), label="intensity")
            fig.xlabel, fig.ylabel = "x", "intensity"
        written.append(fig.save(_out(cfg, "inducing.svg")))
    if not written:
        raise ValueError("nothing to plot: give at least one of chain, bounds, data, inducing")
    for p in written:
        print(p)
    return written


COMMANDS = {
    "synth": cmd_synth,
    "bounds": cmd_bounds,
    "fit-vi": cmd_fit_vi,
    "fit-mcmc": cmd_fit_mcmc,
    "plot": cmd_plot,
}


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpp", description="DPP likelihood bounds, variational fits and MCMC.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML config document")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted keys allowed)")
    return parser


def _one_line(exc: BaseException) -> str:
    if isinstance(exc, ValidationError):
        parts = [f"{'.'.join(str(x) for x in e['loc']) or 'config'}: {e['msg']}" for e in exc.errors()]
        return "invalid config: " + "; ".join(parts)
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _parse_set(args.set)
        overrides.update(seed=args.seed, out=args.out)
        cfg = load_config(args.command, args.config, overrides)
        COMMANDS[args.command](cfg)
    except (ValidationError, ValueError, OSError, OracleError, VIError, FactorizationError, NumericError,
            yaml.YAMLError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
