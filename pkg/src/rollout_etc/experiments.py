"""Experiment drivers behind the command line verbs.

Each driver takes a validated :class:`ExperimentConfig`, writes its
artifacts into an output directory and returns a small dict of headline
numbers.
"""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Callable, Optional

from .config import ExperimentConfig
from .controllers import TTC, ClassicalETC, RolloutETC
from .errors import NumericalError
from .ncs import OverallState, base_period, in_constraint_set, sustainable_transmissions
from .io import write_csv, write_ingredients, write_trace
from .ocp import OcpParams, OcpSolver
from .sim import SimConfig, SimTrace, etc_sigma_search, run_closed_loop, time_ocp
from .terminal import Variant, bucket_floor_is_invariant, synthesize, verify_cost_decrease

SUMMARY_HEADER = [
    "name",
    "controller",
    "variant",
    "N_bar",
    "sigma_bucket",
    "sigma_trigger",
    "steps",
    "total_cost",
    "ttc_cost",
    "transmissions",
    "bandwidth",
    "sustainable_rate",
    "bandwidth_ok",
    "token_budget_ok",
    "min_beta",
    "bucket_ok",
    "constraints_ok",
    "converged",
    "final_norm",
]


def _progress(quiet: bool) -> Callable[[str], None]:
    if quiet:
        return lambda msg: None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _sim_config(cfg: ExperimentConfig, factory) -> SimConfig:
    return SimConfig(
        cfg.plant, cfg.spec, factory, cfg.x0, cfg.u0, cfg.beta0, cfg.horizon_steps, cfg.convergence_tol
    )


def ttc_reference(cfg: ExperimentConfig, ing=None) -> float:
    """Infinite-horizon cost of the periodic LQR baseline, ``x0' P_x x0``."""
    if ing is None:
        ing = synthesize(cfg.plant, cfg.spec, Variant.V1)
    return float(cfg.x0 @ ing.P_x @ cfg.x0)


def summarize(cfg: ExperimentConfig, trace: SimTrace, variant=None, N_bar=None, ttc_cost=None) -> list:
    betas = trace.betas
    constraints_ok = all(in_constraint_set(xi, cfg.plant, cfg.spec) for xi in trace.states())
    rate = cfg.spec.sustainable_rate
    return [
        cfg.name,
        trace.meta.get("controller", cfg.controller),
        "" if variant is None else int(variant),
        "" if N_bar is None else N_bar,
        cfg.sigma_bucket,
        cfg.sigma_trigger,
        len(trace.records),
        trace.total_cost,
        ttc_cost,
        trace.transmissions,
        trace.bandwidth,
        rate,
        trace.bandwidth <= rate + 1e-12,
        trace.transmissions <= sustainable_transmissions(cfg.beta0, len(trace.records), cfg.spec) + 1e-12,
        min(betas),
        min(betas) >= 0,
        constraints_ok,
        trace.converged,
        trace.final_norm(),
    ]


def run_experiment(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> dict:
    """Single closed loop with the configured controller."""
    say = _progress(quiet)
    out = Path(out)
    ing = synthesize(cfg.plant, cfg.spec, cfg.variant)
    ttc_cost = ttc_reference(cfg, ing)
    M = base_period(cfg.spec)
    variant = N_bar = None
    if cfg.controller == "rollout":
        params = OcpParams(cfg.variant, cfg.N_bar, ing, cfg.sigma_bucket)
        factory = lambda: RolloutETC(params, cfg.plant, cfg.spec)  # noqa: E731
        variant, N_bar = cfg.variant, cfg.N_bar
    elif cfg.controller == "ttc":
        factory = lambda: TTC(ing.K_x, M, cfg.spec)  # noqa: E731
    else:
        factory = lambda: ClassicalETC(ing.K_x, cfg.sigma_trigger)  # noqa: E731
    say(f"[{cfg.name}] simulating {cfg.controller} for {cfg.horizon_steps} steps")
    trace = run_closed_loop(_sim_config(cfg, factory))
    write_trace(out / "trace.csv", trace)
    row = summarize(cfg, trace, variant, N_bar, ttc_cost)
    write_csv(out / "summary.csv", SUMMARY_HEADER, [row])
    write_ingredients(out / "ingredients.json", ing)
    say(f"[{cfg.name}] total cost {trace.total_cost:.6f}, {trace.transmissions} transmissions")
    return {"total_cost": trace.total_cost, "transmissions": trace.transmissions, "trace": trace}


def sweep_horizon(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> dict:
    """Rollout ETC cost against the prediction horizon for each variant."""
    say = _progress(quiet)
    out = Path(out)
    M = base_period(cfg.spec)
    rows = []
    results = {}
    ttc_cost = None
    for v in cfg.sweep.variants:
        ing = synthesize(cfg.plant, cfg.spec, v)
        if ttc_cost is None:
            ttc_cost = ttc_reference(cfg, ing)
        for N in cfg.sweep.N_bar:
            if Variant(v) == Variant.V1 and N < M:
                rows.append([v, N, "", "", "", "", "", ttc_cost, "horizon_below_M"])
                continue
            params = OcpParams(v, N, ing, cfg.sigma_bucket)
            say(f"[{cfg.name}] variant {v}, N_bar={N}")
            trace = run_closed_loop(
                _sim_config(cfg, lambda p=params: RolloutETC(p, cfg.plant, cfg.spec))
            )
            results[(v, N)] = trace.total_cost
            rows.append(
                [v, N, trace.total_cost, trace.transmissions, trace.bandwidth, trace.converged,
                 min(trace.betas), ttc_cost, "ok"]
            )
    write_csv(
        out / "sweep_horizon.csv",
        ["variant", "N_bar", "cost", "transmissions", "bandwidth", "converged", "min_beta",
         "ttc_cost", "status"],
        rows,
    )
    return {"costs": results, "ttc_cost": ttc_cost}


def etc_search(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> dict:
    """Grid search of the classical ETC trigger parameter."""
    say = _progress(quiet)
    out = Path(out)
    ing = synthesize(cfg.plant, cfg.spec, Variant.V1)
    say(f"[{cfg.name}] classical ETC over {cfg.etc_grid_size} trigger values")
    res = etc_sigma_search(
        cfg.plant, cfg.spec, cfg.x0, cfg.u0, cfg.beta0, ing.K_x, cfg.etc_grid_size, cfg.horizon_steps
    )
    steps = cfg.horizon_steps
    rate = cfg.spec.sustainable_rate
    write_csv(
        out / "etc_grid.csv",
        ["sigma", "cost", "transmissions", "bandwidth", "bandwidth_ok"],
        [
            [s, c, t, t / steps, t / steps <= rate + 1e-12]
            for s, c, t in zip(res.grid, res.costs, res.transmissions)
        ],
    )
    summary = [
        ["best_cost", res.best_sigma, res.best_trace.total_cost, res.best_trace.transmissions,
         res.best_bandwidth, cfg.etc_grid_size],
    ]
    write_trace(out / "etc_best_trace.csv", res.best_trace)
    if res.feasible_trace is not None:
        summary.append(
            ["best_bandwidth_feasible", res.feasible_sigma, res.feasible_trace.total_cost,
             res.feasible_trace.transmissions, res.feasible_bandwidth, cfg.etc_grid_size]
        )
        write_trace(out / "etc_feasible_trace.csv", res.feasible_trace)
    write_csv(
        out / "etc_summary.csv",
        ["selection", "sigma", "cost", "transmissions", "bandwidth", "grid_size"],
        summary,
    )
    say(
        f"[{cfg.name}] best sigma {res.best_sigma:g}: cost {res.best_trace.total_cost:.4f}, "
        f"{res.best_trace.transmissions} transmissions"
    )
    return {"result": res}


def timing(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> dict:
    """Median cold-start OCP solve time at ``k = 0`` against the horizon."""
    say = _progress(quiet)
    out = Path(out)
    M = base_period(cfg.spec)
    xi0 = OverallState(cfg.x0, cfg.u0, cfg.beta0)
    rows = []
    medians = {}
    for v in cfg.timing.variants:
        ing = synthesize(cfg.plant, cfg.spec, v)
        for N in cfg.timing.N_bar:
            if Variant(v) == Variant.V1 and N < M:
                continue
            params = OcpParams(v, N, ing, cfg.sigma_bucket)
            med, feasible = time_ocp(cfg.plant, cfg.spec, params, xi0, repeats=cfg.timing.repeats)
            n_sched = OcpSolver(params, cfg.plant, cfg.spec).solve(xi0, 0).n_schedules_examined
            medians[(v, N)] = med
            say(f"[{cfg.name}] variant {v}, N_bar={N}: {med:.4f} s (feasible={feasible})")
            rows.append([v, N, med, feasible, n_sched, cfg.timing.repeats])
    write_csv(
        out / "timing.csv",
        ["variant", "N_bar", "median_seconds", "feasible", "schedules", "repeats"],
        rows,
    )
    return {"medians": medians}


def verify_ingredients(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> dict:
    """Synthesize both variants and check their cost decrease inequalities."""
    say = _progress(quiet)
    out = Path(out)
    rows = []
    ok = True
    for v in (Variant.V1, Variant.V2):
        ing = synthesize(cfg.plant, cfg.spec, v)
        rep = verify_cost_decrease(ing, cfg.plant, cfg.spec)
        floors_ok = bucket_floor_is_invariant(ing.bucket_floor, cfg.spec)
        for j, eig in enumerate(rep.max_eigenvalues):
            alpha: Optional[float] = None if ing.alpha is None else ing.alpha[j % len(ing.alpha)]
            rows.append(
                [int(v), j, eig, eig <= rep.tol, ing.bucket_floor[j % len(ing.bucket_floor)],
                 alpha, floors_ok]
            )
        ok = ok and rep.passed and floors_ok
        write_ingredients(out / f"ingredients_v{int(v)}.json", ing)
        say(f"[{cfg.name}] variant {int(v)}: worst eigenvalue {rep.worst:.3e}, passed={rep.passed}")
    write_csv(
        out / "ingredients_check.csv",
        ["variant", "inequality", "max_eigenvalue", "passed", "bucket_floor", "alpha", "floors_invariant"],
        rows,
    )
    if not ok:
        raise NumericalError("synthesized terminal ingredients fail the cost decrease check")
    return {"passed": ok}


VERBS = {
    "run": run_experiment,
    "sweep-horizon": sweep_horizon,
    "etc-search": etc_search,
    "timing": timing,
    "verify-ingredients": verify_ingredients,
}
