"""Reproducible experiment driver.

One JSON config (or inline flags) fully determines a run: every random
number flows from a single mandatory master seed, outputs embed the
resolved config, and results are byte-identical across repeated runs and
worker counts.  Exit codes: 0 success, 2 config/validation error, 3
numerical-diagnostic failure (divergence, low sampler quality,
under-resolved discretization).  Errors go to stderr as single-line JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import boundary as boundary_mod
from . import invariant as invariant_mod
from . import pdlimit as pdlimit_mod
from . import portfolio as portfolio_mod
from . import sde as sde_mod
from ._util import write_csv, write_json
from .simplex import (
    DivergentIntegralError,
    ModelParams,
    QuadratureError,
    validate_params,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIAGNOSTIC = 3


class ConfigError(ValueError):
    def __init__(self, detail, violated_index=None):
        super().__init__(detail)
        self.violated_index = violated_index


class DiagnosticError(RuntimeError):
    pass


def _fail(kind, exc, code):
    payload = {"error": kind, "detail": str(exc)}
    index = getattr(exc, "violated_index", None)
    if index is not None:
        payload["violated_index"] = index
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config key {key!r} is required")
    return cfg[key]


def model_from_config(cfg: dict) -> ModelParams:
    block = _require(cfg, "model")
    try:
        params = ModelParams(
            a=np.asarray(block["a"], dtype=float),
            gamma=np.asarray(block.get("gamma", np.zeros(len(block["a"]))), dtype=float),
            sigma=float(block.get("sigma", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model block: {exc}") from exc
    report = validate_params(params)
    if not report.valid:
        raise ConfigError(
            f"invalid model: tail margin at k={report.first_violation} is nonpositive",
            violated_index=report.first_violation,
        )
    return params


def _x0(cfg_block, d):
    x0 = cfg_block.get("x0", "uniform")
    if isinstance(x0, str):
        if x0 != "uniform":
            raise ConfigError(f"unknown x0 spec {x0!r}")
        return np.full(d, 1.0 / d)
    return np.asarray(x0, dtype=float)


def _chunks(n_paths, threads):
    threads = max(1, int(threads))
    size = max(1, -(-n_paths // threads))
    offset = 0
    while offset < n_paths:
        take = min(size, n_paths - offset)
        yield offset, take
        offset += take


def _parallel_batches(params, x0, T, dt, seed, n_paths, threads, observer_factory):
    """Simulate path chunks on a worker pool; results merge by path index,
    so the outcome does not depend on the number of workers."""
    jobs = list(_chunks(n_paths, threads))

    def run(job):
        offset, count = job
        return sde_mod.run_paths(params, x0, T, dt, seed, n_paths=count,
                                 observers=[observer_factory()],
                                 path_offset=offset)

    if threads <= 1 or len(jobs) == 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def _merged_projection(batches):
    total = sum(int(b.n_projected.sum()) for b in batches)
    steps = sum(b.n_steps * b.n_paths for b in batches)
    return total / max(steps, 1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, out, threads):
    params = model_from_config(cfg)
    sim = _require(cfg, "sim")
    T, dt = float(sim["T"]), float(sim["dt"])
    n_paths = int(sim.get("paths", 1))
    x0 = _x0(sim, params.d)
    seed = cfg["seed"]
    batch = sde_mod.run_paths(params, x0, T, dt, seed, n_paths=n_paths, store=True)
    for path in batch.paths:
        path.to_csv(out / f"path_{path.path_index:04d}.csv")
    write_json(out / "simulate_summary.json", {"results": batch.summary()}, cfg)
    if batch.under_resolved:
        raise DiagnosticError(
            f"under-resolved run: projection rate {batch.projection_rate:.2%} > 1%"
        )
    return EXIT_OK


def cmd_invariant(cfg, out, threads):
    params = model_from_config(cfg)
    sampler = cfg.get("sampler", {})
    n = int(sampler.get("n", 10_000))
    seed = cfg["seed"]
    sample = invariant_mod.sample_invariant(
        params, n, seed, kind=sampler.get("kind", "ranked"),
        method=sampler.get("method"),
    )
    write_csv(out / "invariant_samples.csv",
              [f"x_{i}" for i in range(1, params.d + 1)], sample.draws)
    payload = {
        "results": {
            "method": sample.method,
            "acceptance_rate": sample.acceptance_rate,
            "ess": sample.ess,
            "warnings": sample.warnings,
        }
    }
    ergodic_cfg = cfg.get("ergodic")
    report = None
    if ergodic_cfg:
        funcs = {name: name for name in ergodic_cfg.get("functions", ["y1"])}
        report = invariant_mod.ergodic_compare(
            params, funcs,
            T=float(ergodic_cfg["T"]), dt=float(ergodic_cfg["dt"]),
            n_paths=int(ergodic_cfg.get("paths", 8)),
            n_samples=int(ergodic_cfg.get("n", n)),
            seed=seed, sampler_method=sampler.get("method"),
            z_threshold=float(cfg.get("tolerances", {}).get("ergodic_z", 3.0)),
        )
        payload["results"]["ergodic"] = report.rows()
        payload["results"]["ergodic_pass"] = report.passed
    write_json(out / "invariant_report.json", payload, cfg)
    if sample.warnings:
        raise DiagnosticError("; ".join(sample.warnings))
    if report is not None and report.under_resolved:
        raise DiagnosticError("ergodic comparison ran under-resolved")
    return EXIT_OK


def cmd_growth(cfg, out, threads):
    params = model_from_config(cfg)
    n_top = int(_require(cfg, "open_market_size"))
    seed = cfg["seed"]
    exists, detail = portfolio_mod.growth_exists(params, n_top)
    payload = {"results": {"exists": exists, "existence_report": detail}}
    growth_cfg = cfg.get("growth", {})
    if exists and params.is_rank_based and np.all(detail["margins"] > 0.0):
        report = portfolio_mod.robust_growth_rate(
            params, n_top, method=growth_cfg.get("method", "mc"),
            n=int(growth_cfg.get("n", 100_000)), seed=seed,
        )
        payload["results"]["robust_growth"] = report.as_dict()
    sim = growth_cfg.get("sim")
    if exists and sim:
        T, dt = float(sim["T"]), float(sim["dt"])
        n_paths = int(sim.get("paths", 4))
        strategy = portfolio_mod.GrowthOptimalStrategy(params, n_top)
        batches = _parallel_batches(
            params, _x0(sim, params.d), T, dt, seed, n_paths, threads,
            lambda: portfolio_mod.WealthObserver(strategy, params),
        )
        logv = np.concatenate([b.observations["wealth"]["log_wealth"] for b in batches])
        guarded = np.concatenate([b.observations["wealth"]["n_guarded"] for b in batches])
        payload["results"]["backtest"] = {
            "per_path_log_wealth": logv,
            "mean_rate": float(logv.mean() / (batches[0].horizon)),
            "horizon": batches[0].horizon,
            "n_guarded": guarded,
            "projection_rate": _merged_projection(batches),
        }
    write_json(out / "growth_report.json", payload, cfg)
    backtest = payload["results"].get("backtest")
    if backtest and backtest["projection_rate"] > sde_mod.UNDER_RESOLVED_RATE:
        raise DiagnosticError("wealth backtest ran under-resolved")
    return EXIT_OK


def cmd_boundary(cfg, out, threads):
    params = model_from_config(cfg)
    block = _require(cfg, "boundary")
    query = boundary_mod.BoundaryQuery(
        kind=block.get("kind", "rank_hits"),
        k=block.get("k"),
        names=tuple(block.get("names", ())),
    )
    table = boundary_mod.mc_hit_frequency(
        params, query,
        T=float(block.get("T", 50.0)),
        eps=tuple(block.get("eps", (1e-2, 1e-3, 1e-4))),
        n_paths=int(block.get("paths", 500)),
        dt=float(block.get("dt", 1e-3)),
        seed=cfg["seed"],
    )
    table.to_csv(out / "boundary_frequencies.csv")
    write_json(out / "boundary_verdict.json", {"results": table.as_dict()}, cfg)
    if table.under_resolved:
        raise DiagnosticError("boundary simulation ran under-resolved")
    return EXIT_OK


def cmd_pd(cfg, out, threads):
    block = _require(cfg, "pd")
    theta = float(_require(block, "theta"))
    n = int(block.get("n", 100_000))
    M = int(block.get("M", 10_000))
    max_degree = int(block.get("max_degree", 6))
    seed = cfg["seed"]
    sample = pdlimit_mod.pd_sample(theta, M, n, seed)
    multisets = _multisets_up_to(max_degree)
    rows = []
    table = {}
    for ms in multisets:
        exact = pdlimit_mod.moment_recursion(theta, ms)
        vals = np.ones(sample.n)
        for m in ms:
            vals = vals * pdlimit_mod.power_sum(sample.weights, m)
        mc = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(sample.n))
        key = "*".join(f"phi{m}" for m in ms)
        rows.append((key, exact, mc, se))
        table[key] = exact
    write_csv(out / "pd_moments.csv", ["product", "recursion", "mc", "se"], rows)
    write_json(out / "pd_report.json", {
        "results": {
            "theta": theta,
            "n": n,
            "max_tail_mass": float(sample.tail_mass.max()),
            "recursion_table": table,
        }
    }, cfg)
    return EXIT_OK


def _multisets_up_to(total):
    out = []

    def grow(prefix, remaining, minimum):
        for m in range(minimum, remaining + 1):
            out.append(tuple(prefix + [m]))
            grow(prefix + [m], remaining - m, m)

    grow([], total, 2)
    return sorted(out, key=lambda ms: (sum(ms), ms))


def cmd_limit(cfg, out, threads):
    block = _require(cfg, "pd")
    pd_cfg = pdlimit_mod.PDConfig(
        theta=float(_require(block, "theta")),
        tilt=tuple(block.get("tilt", ())),
        M=int(block.get("M", 10_000)),
    )
    sched_block = _require(cfg, "schedule")
    schedule = pdlimit_mod.make_schedule(
        pd_cfg.theta, pd_cfg.tilt,
        d_list=sched_block["d_list"],
        tail=sched_block.get("tail", "flat"),
    )
    limit_block = cfg.get("limit", {})
    n = int(limit_block.get("n", 100_000))
    func_names = limit_block.get("functions", ["phi2"])
    funcs = {name: invariant_mod.make_statistic(name) for name in func_names}
    report = pdlimit_mod.convergence_experiment(schedule, pd_cfg, funcs, n, cfg["seed"])
    report.to_csv(out / "limit_convergence.csv")
    payload = {"results": {"passed": report.passed, "final_gap_z": report.final_gap_z}}
    growth_block = limit_block.get("growth")
    if growth_block:
        est = pdlimit_mod.limit_growth_rate(
            pd_cfg, sigma=float(growth_block.get("sigma", 1.0)),
            n_top=int(growth_block.get("N", pd_cfg.n_tilted)),
            n=n, seed=cfg["seed"],
        )
        payload["results"]["limit_growth"] = {
            "value": est.value, "se": est.se, "ess": est.ess,
        }
    write_json(out / "limit_report.json", payload, cfg)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "invariant": cmd_invariant,
    "growth": cmd_growth,
    "boundary": cmd_boundary,
    "pd": cmd_pd,
    "limit": cmd_limit,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="openjacobi",
        description="Simulation and verification experiments for open-market "
                    "growth optimality under hybrid Jacobi market-weight dynamics.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--threads", type=int, default=1, help="worker pool size")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        if "seed" not in cfg:
            raise ConfigError("a master seed is required (config 'seed' or --seed)")
        cfg["seed"] = int(cfg["seed"])
        if cfg["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = COMMANDS[args.command]
        return handler(cfg, out, args.threads)
    except (ConfigError, sde_mod.InvalidModelError, ValueError) as exc:
        return _fail("validation", exc, EXIT_CONFIG)
    except (DiagnosticError, DivergentIntegralError, QuadratureError,
            pdlimit_mod.HeavyTiltError) as exc:
        return _fail("diagnostic", exc, EXIT_DIAGNOSTIC)


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
