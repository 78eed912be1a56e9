"""Closed-loop simulation, cost accounting and baseline parameter search."""
from __future__ import annotations

import statistics
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controllers import TTC, ClassicalETC, Controller, RolloutETC
from .errors import NotConverged, ValidationError
from .ncs import OverallState, PlantModel, TokenBucketSpec, overall_step, stage_cost
from .ocp import OcpParams, OcpSolver

DEFAULT_HORIZON = 501
DEFAULT_TOL = 1e-6
DEFAULT_GRID = 1001


@dataclass
class SimConfig:
    """Closed-loop setup. ``horizon_steps`` counts the simulated steps
    ``k = 0, ..., horizon_steps - 1``."""

    plant: PlantModel
    spec: TokenBucketSpec
    controller: Callable[[], Controller]
    x0: np.ndarray
    u0: np.ndarray
    beta0: int
    horizon_steps: int = DEFAULT_HORIZON
    convergence_tol: float = DEFAULT_TOL

    def __post_init__(self):
        problems = []
        if self.horizon_steps < 1:
            problems.append(f"horizon_steps must be >= 1, got {self.horizon_steps}")
        if not 0 <= self.beta0 <= self.spec.b:
            problems.append(f"beta0 must lie in [0, {self.spec.b}], got {self.beta0}")
        if np.size(self.x0) != self.plant.n:
            problems.append(f"x0 must have {self.plant.n} entries, got {np.size(self.x0)}")
        if np.size(self.u0) != self.plant.m:
            problems.append(f"u0 must have {self.plant.m} entries, got {np.size(self.u0)}")
        if problems:
            raise ValidationError(problems)

    def initial_state(self) -> OverallState:
        return OverallState(self.x0, self.u0, self.beta0)


@dataclass
class StepRecord:
    k: int
    xi: OverallState
    pi: object
    stage_cost: float
    ocp_value: float = float("nan")
    schedules_examined: int = 0
    wall_time: float = 0.0


@dataclass
class SimTrace:
    records: list
    final: OverallState
    convergence_tol: float = DEFAULT_TOL
    meta: dict = field(default_factory=dict)

    @property
    def cumulative_cost(self) -> np.ndarray:
        return np.cumsum([r.stage_cost for r in self.records])

    @property
    def total_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records))

    @property
    def gammas(self) -> list[int]:
        return [r.pi.gamma for r in self.records]

    @property
    def transmissions(self) -> int:
        return sum(self.gammas)

    @property
    def transmission_times(self) -> list[int]:
        return [r.k for r in self.records if r.pi.gamma]

    @property
    def bandwidth(self) -> float:
        return self.transmissions / len(self.records)

    @property
    def betas(self) -> list[int]:
        return [r.xi.beta for r in self.records] + [self.final.beta]

    def states(self) -> list[OverallState]:
        return [r.xi for r in self.records] + [self.final]

    def final_norm(self) -> float:
        return float(np.max(np.abs(self.final.z))) if self.final.z.size else 0.0

    @property
    def converged(self) -> bool:
        return self.final_norm() < self.convergence_tol


def run_closed_loop(cfg: SimConfig, controller: Optional[Controller] = None) -> SimTrace:
    """Apply controller and overall dynamics for ``cfg.horizon_steps`` steps."""
    ctrl = controller if controller is not None else cfg.controller()
    ctrl.reset()
    xi = cfg.initial_state()
    records = []
    for k in range(cfg.horizon_steps):
        t0 = time.perf_counter()
        pi, sol = ctrl.step(xi, k)
        elapsed = time.perf_counter() - t0
        rec = StepRecord(k, xi, pi, stage_cost(xi, pi, cfg.plant), wall_time=elapsed)
        if sol is not None:
            rec.ocp_value = sol.value
            rec.schedules_examined = sol.n_schedules_examined
        records.append(rec)
        xi = overall_step(xi, pi, cfg.plant, cfg.spec, enforce_bucket=ctrl.enforces_bucket)
    return SimTrace(records, xi, cfg.convergence_tol, {"controller": ctrl.name})


def infinite_cost_estimate(trace: SimTrace, strict: bool = False) -> float:
    """Cumulative cost of a settled trace.

    An unsettled trace warns, or raises ``NotConverged`` when ``strict``.
    """
    if not trace.converged:
        msg = (
            f"trace did not settle: final |(x,u)|_inf = {trace.final_norm():.3e} "
            f">= {trace.convergence_tol:g}"
        )
        if strict:
            raise NotConverged(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return trace.total_cost


@dataclass
class EtcSearchResult:
    grid: np.ndarray
    costs: np.ndarray
    transmissions: np.ndarray
    best_sigma: float
    best_trace: SimTrace
    best_bandwidth: float
    feasible_sigma: Optional[float]
    feasible_trace: Optional[SimTrace]
    feasible_bandwidth: Optional[float]

    def __iter__(self):
        # unpacks as (best sigma, trace, bandwidth)
        return iter((self.best_sigma, self.best_trace, self.best_bandwidth))


def etc_sigma_search(
    plant: PlantModel,
    spec: TokenBucketSpec,
    x0,
    u0,
    beta0: int,
    gain,
    grid_size: int = DEFAULT_GRID,
    horizon_steps: int = DEFAULT_HORIZON,
) -> EtcSearchResult:
    """Grid search of the classical ETC trigger parameter over ``[0, 1]``.

    Also reports the cheapest trigger whose average bandwidth does not
    exceed the sustainable rate ``g/c``. Ties keep the smallest sigma.
    """
    if grid_size < 2:
        raise ValidationError(f"grid_size must be >= 2, got {grid_size}")
    grid = np.linspace(0.0, 1.0, grid_size)
    costs = np.empty(grid_size)
    counts = np.empty(grid_size, dtype=int)
    traces = []
    for i, s in enumerate(grid):
        cfg = SimConfig(
            plant, spec, lambda s=s: ClassicalETC(gain, s), x0, u0, beta0, horizon_steps
        )
        tr = run_closed_loop(cfg)
        costs[i] = tr.total_cost
        counts[i] = tr.transmissions
        traces.append(tr)
    best = int(np.argmin(costs))
    rate = spec.sustainable_rate
    ok = [i for i in range(grid_size) if traces[i].bandwidth <= rate + 1e-12]
    feas = min(ok, key=lambda i: (costs[i], i)) if ok else None
    return EtcSearchResult(
        grid=grid,
        costs=costs,
        transmissions=counts,
        best_sigma=float(grid[best]),
        best_trace=traces[best],
        best_bandwidth=traces[best].bandwidth,
        feasible_sigma=None if feas is None else float(grid[feas]),
        feasible_trace=None if feas is None else traces[feas],
        feasible_bandwidth=None if feas is None else traces[feas].bandwidth,
    )


def bucket_floor_limit(spec: TokenBucketSpec, N_bar: int) -> int:
    """Level the bucket eventually stays above under the bucket-penalized OCP."""
    return max(0, spec.b - N_bar * spec.g)


def bucket_convergence_check(trace: SimTrace, lower: int) -> bool:
    """True iff the bucket stays at or above ``lower`` over the last quarter."""
    betas = trace.betas
    start = len(betas) - max(1, len(betas) // 4)
    return all(beta >= lower for beta in betas[start:])


def settling_step(trace: SimTrace, lower: int) -> Optional[int]:
    """First step from which the bucket never drops below ``lower`` again."""
    betas = trace.betas
    for k in range(len(betas) - 1, -1, -1):
        if betas[k] < lower:
            return k + 1 if k + 1 < len(betas) else None
    return 0


def time_ocp(
    plant: PlantModel,
    spec: TokenBucketSpec,
    params: OcpParams,
    xi0: OverallState,
    k: int = 0,
    repeats: int = 5,
) -> tuple[float, bool]:
    """Median wall time of a cold OCP solve (fresh solver, empty cache).

    Returns the median in seconds and whether the OCP was feasible; an
    infeasible OCP still enumerates every schedule, so it is timed as well.
    """
    samples = []
    feasible = False
    for _ in range(repeats):
        solver = OcpSolver(params, plant, spec)
        t0 = time.perf_counter()
        sol = solver.solve(xi0, k)
        samples.append(time.perf_counter() - t0)
        feasible = sol.feasible
    return statistics.median(samples), feasible


def rollout_config(plant, spec, params: OcpParams, x0, u0, beta0, **kw) -> SimConfig:
    return SimConfig(plant, spec, lambda: RolloutETC(params, plant, spec), x0, u0, beta0, **kw)


def ttc_config(plant, spec, gain, x0, u0, beta0, **kw) -> SimConfig:
    M = -(-spec.c // spec.g)
    return SimConfig(plant, spec, lambda: TTC(gain, M, spec), x0, u0, beta0, **kw)
