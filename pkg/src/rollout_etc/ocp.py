"""Mixed-integer optimal control problem of rollout ETC.

The integer part (transmission schedule) is enumerated exactly: only
schedules whose integer bucket trajectory stays nonnegative and ends above
the terminal floor are generated. For each schedule the continuous part is
a convex QP in the transmitted control updates, condensed from the hold /
transmit dynamics.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .ncs import (
    OverallInput,
    OverallState,
    PlantModel,
    TokenBucketSpec,
    base_period,
    overall_step,
)
from .qp import DenseQP, EllipsoidConstraint, QpSolution, solve_active_set, solve_unconstrained
from .terminal import TerminalIngredients, Variant, hold_dynamics

TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class OcpParams:
    variant: Variant
    N_bar: int
    ingredients: TerminalIngredients
    sigma_bucket: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        problems = []
        if self.N_bar < 1:
            problems.append(f"prediction horizon must be >= 1, got {self.N_bar}")
        if self.variant == Variant.V1 and self.N_bar < self.ingredients.M:
            problems.append(
                f"Variant 1 needs a horizon of at least M={self.ingredients.M}, got {self.N_bar}"
            )
        if self.variant != self.ingredients.variant:
            problems.append("ingredients were synthesized for a different variant")
        if self.sigma_bucket < 0:
            problems.append(f"sigma_bucket must be >= 0, got {self.sigma_bucket}")
        if problems:
            raise ValidationError(problems)

    @property
    def M(self) -> int:
        return self.ingredients.M


def horizon_at(params: OcpParams, k: int) -> int:
    if params.variant == Variant.V1:
        return params.N_bar - k % params.M
    return params.N_bar


def terminal_phase(params: OcpParams, k: int) -> int:
    """Phase of the terminal ingredients used by the OCP solved at time ``k``.

    Variant 1 always ends a cycle at phase 0. Variant 2 indexes the
    ingredients by the absolute time ``k + N_bar`` of the terminal state.
    """
    if params.variant == Variant.V1:
        return 0
    return (k + params.N_bar) % params.M


def enumerate_schedules(beta0: int, N: int, spec: TokenBucketSpec, terminal_floor: int) -> list:
    """All bucket-feasible transmission schedules of length ``N``.

    Depth-first, hold branch first, so the result is in lexicographic order.
    A prefix is pruned when a transmission lacks tokens or when not even
    holding for the rest of the horizon reaches ``terminal_floor``.
    """
    g, c, b = spec.g, spec.c, spec.b
    out = []
    prefix = [0] * N

    def visit(i: int, beta: int):
        remaining = N - i
        if min(beta + remaining * g, b) < terminal_floor:
            return
        if remaining == 0:
            out.append(tuple(prefix))
            return
        prefix[i] = 0
        visit(i + 1, min(beta + g, b))
        if beta + g - c >= 0:
            prefix[i] = 1
            visit(i + 1, min(beta + g - c, b))
            prefix[i] = 0

    visit(0, int(beta0))
    return out


def bucket_trajectory(beta0: int, schedule, spec: TokenBucketSpec) -> list[int]:
    out = [int(beta0)]
    for gamma in schedule:
        out.append(min(out[-1] + spec.g - gamma * spec.c, spec.b))
    return out


@dataclass(eq=False)
class ScheduleTemplate:
    """Condensed OCP for one schedule, independent of the initial state.

    With ``z0 = [x; u]`` and ``w`` the stacked transmitted updates, the
    objective is ``1/2 w'Hw + (F z0)'w + z0'C z0`` and the predicted
    ``[x; u]`` at step ``i`` is ``Phi[i] z0 + Gamma[i] w``.
    """

    schedule: tuple
    phase: int
    H: np.ndarray
    F: np.ndarray
    C: np.ndarray
    Phi: list
    Gamma: list
    G: np.ndarray
    h0: np.ndarray
    h_map: np.ndarray

    @property
    def d(self) -> int:
        return self.H.shape[0]


def build_template(
    schedule, phase: int, params: OcpParams, plant: PlantModel
) -> ScheduleTemplate:
    n, m = plant.n, plant.m
    dz = n + m
    tx = [i for i, gam in enumerate(schedule) if gam == 1]
    d = m * len(tx)
    slot = {i: j for j, i in enumerate(tx)}

    A0 = hold_dynamics(plant)
    A_reset = np.zeros((dz, dz))
    A_reset[:n, :n] = plant.A
    B_reset = np.vstack([plant.B, np.eye(m)])
    W = plant.stage_weight()
    Wx = np.zeros((dz, dz))
    Wx[:n, :n] = plant.Q

    Hs = np.zeros((d, d))
    Fs = np.zeros((d, dz))
    Cs = np.zeros((dz, dz))
    Phi = [np.eye(dz)]
    Gam = [np.zeros((dz, d))]
    for i, gam in enumerate(schedule):
        P, G = Phi[-1], Gam[-1]
        Wi = Wx if gam else W
        WP = Wi @ P
        Cs += P.T @ WP
        Fs += G.T @ WP
        Hs += G.T @ Wi @ G
        if gam:
            j = slot[i] * m
            Hs[j : j + m, j : j + m] += plant.R
            G_next = A_reset @ G
            G_next[:, j : j + m] += B_reset
            Phi.append(A_reset @ P)
            Gam.append(G_next)
        else:
            Phi.append(A0 @ P)
            Gam.append(A0 @ G)
    Pt = params.ingredients.terminal_weight(phase)
    P, G = Phi[-1], Gam[-1]
    Cs += P.T @ Pt @ P
    Fs += G.T @ Pt @ P
    Hs += G.T @ Pt @ G

    rows, h0, h_map = [], [], []
    if plant.state_box is not None:
        lo, hi = plant.state_box.lower, plant.state_box.upper
        for i in range(1, len(schedule) + 1):
            for r in range(n):
                if np.isfinite(hi[r]):
                    rows.append(Gam[i][r])
                    h0.append(hi[r])
                    h_map.append(-Phi[i][r])
                if np.isfinite(lo[r]):
                    rows.append(-Gam[i][r])
                    h0.append(-lo[r])
                    h_map.append(Phi[i][r])
    if plant.input_box is not None:
        lo, hi = plant.input_box.lower, plant.input_box.upper
        for j in range(len(tx)):
            for r in range(m):
                e = np.zeros(d)
                e[j * m + r] = 1.0
                if np.isfinite(hi[r]):
                    rows.append(e)
                    h0.append(hi[r])
                    h_map.append(np.zeros(dz))
                if np.isfinite(lo[r]):
                    rows.append(-e)
                    h0.append(-lo[r])
                    h_map.append(np.zeros(dz))
    G_all = np.array(rows, dtype=float).reshape(len(rows), d)
    return ScheduleTemplate(
        schedule=tuple(schedule),
        phase=phase,
        H=2.0 * (0.5 * (Hs + Hs.T)),
        F=2.0 * Fs,
        C=0.5 * (Cs + Cs.T),
        Phi=Phi,
        Gamma=Gam,
        G=G_all,
        h0=np.array(h0, dtype=float),
        h_map=np.array(h_map, dtype=float).reshape(len(h_map), dz),
    )


def _instantiate(tpl: ScheduleTemplate, z0: np.ndarray, params: OcpParams):
    """Return ``(qp, constant, consistent)`` for a concrete initial state.

    ``consistent`` is False when a constraint that does not depend on the
    decisions is already violated.
    """
    f = tpl.F @ z0
    const = float(z0 @ tpl.C @ z0)
    G, h = tpl.G, tpl.h0 + tpl.h_map @ z0
    consistent = True
    if G.shape[0]:
        free = np.all(np.abs(G) <= 1e-14, axis=1)
        if np.any(h[free] < -1e-9):
            consistent = False
        G, h = G[~free], h[~free]
    ellipsoids = ()
    alpha = params.ingredients.radius(tpl.phase)
    if alpha is not None:
        ellipsoids = (
            EllipsoidConstraint(
                shape=params.ingredients.shape(tpl.phase),
                radius=alpha,
                Gamma=tpl.Gamma[-1],
                offset=tpl.Phi[-1] @ z0,
            ),
        )
    qp = DenseQP(tpl.H, f, G if G.shape[0] else None, h if G.shape[0] else None, ellipsoids)
    return qp, const, consistent


def condense(
    xi0: OverallState,
    schedule,
    params: OcpParams,
    plant: PlantModel,
    spec: TokenBucketSpec,
    k: int = 0,
) -> tuple[DenseQP, float]:
    """Condensed QP and additive constant for a fixed schedule.

    The QP objective plus the constant equals the OCP cost of the
    corresponding trajectory, bucket term included.
    """
    tpl = build_template(schedule, terminal_phase(params, k), params, plant)
    qp, const, _ = _instantiate(tpl, xi0.z, params)
    return qp, const + bucket_penalty(xi0.beta, schedule, params, spec)


def bucket_penalty(beta0: int, schedule, params: OcpParams, spec: TokenBucketSpec) -> float:
    if params.sigma_bucket == 0.0:
        return 0.0
    beta_N = bucket_trajectory(beta0, schedule, spec)[-1]
    return params.sigma_bucket * float(spec.b**2 - beta_N**2)


def trajectory_cost(xi0, inputs, params: OcpParams, plant, spec, k: int = 0) -> float:
    """OCP cost of an explicit input sequence by direct simulation."""
    from .ncs import stage_cost

    xi = xi0
    total = 0.0
    for pi in inputs:
        total += stage_cost(xi, pi, plant)
        xi = overall_step(xi, pi, plant, spec)
    z = xi.z
    phase = terminal_phase(params, k)
    total += float(z @ params.ingredients.terminal_weight(phase) @ z)
    if params.sigma_bucket:
        total += params.sigma_bucket * (spec.b**2 - xi.beta**2)
    return total


@dataclass(eq=False)
class OcpSolution:
    pi_star: list
    xi_pred: list
    value: float
    schedule: tuple
    n_schedules_examined: int
    feasible: bool
    horizon: int = 0
    terminal_phase: int = 0
    qp: Optional[QpSolution] = None
    solve_seconds: float = 0.0


def _better(val, key, best_val, best_key) -> bool:
    tol = TIE_RTOL * max(abs(val), abs(best_val))
    if val < best_val - tol:
        return True
    if abs(val - best_val) <= tol:
        return key < best_key
    return False


class OcpSolver:
    """Solves the OCP repeatedly for one plant/bucket/parameter set.

    Condensed schedule templates are cached, since the same schedules
    recur at every step of a closed-loop simulation.
    """

    def __init__(self, params: OcpParams, plant: PlantModel, spec: TokenBucketSpec):
        self.params = params
        self.plant = plant
        self.spec = spec
        self._templates: dict = {}
        if params.ingredients.M != base_period(spec):
            raise ValidationError("ingredients were synthesized for a different token bucket")

    def template(self, schedule, phase: int) -> ScheduleTemplate:
        key = (schedule, phase)
        tpl = self._templates.get(key)
        if tpl is None:
            tpl = build_template(schedule, phase, self.params, self.plant)
            self._templates[key] = tpl
        return tpl

    def _solve_fixed(self, tpl: ScheduleTemplate, z0: np.ndarray):
        if not self.plant.constrained:
            return solve_unconstrained(tpl.H, tpl.F @ z0), float(z0 @ tpl.C @ z0)
        qp, const, consistent = _instantiate(tpl, z0, self.params)
        if not consistent:
            return None, const
        sol = solve_active_set(qp)
        if not sol.optimal:
            return None, const
        return sol, const

    def solve(self, xi0: OverallState, k: int) -> OcpSolution:
        t_start = time.perf_counter()
        params, plant, spec = self.params, self.plant, self.spec
        N = horizon_at(params, k)
        phase = terminal_phase(params, k)
        floor = params.ingredients.floor(phase)
        schedules = enumerate_schedules(xi0.beta, N, spec, floor)
        z0 = xi0.z

        initial_ok = True
        if plant.state_box is not None and not plant.state_box.contains(xi0.x, tol=1e-9):
            initial_ok = False
        if plant.input_box is not None and not plant.input_box.contains(xi0.u, tol=1e-9):
            initial_ok = False
        if not 0 <= xi0.beta <= spec.b:
            initial_ok = False

        best = None
        if initial_ok:
            for sched in schedules:
                tpl = self.template(sched, phase)
                sol, const = self._solve_fixed(tpl, z0)
                if sol is None:
                    continue
                val = sol.value + const + bucket_penalty(xi0.beta, sched, params, spec)
                key = (sum(sched), sched)
                if best is None or _better(val, key, best[0], best[1]):
                    best = (val, key, sched, sol)

        elapsed = time.perf_counter() - t_start
        if best is None:
            return OcpSolution([], [xi0], np.inf, (), len(schedules), False, N, phase, None, elapsed)

        val, _, sched, sol = best
        pi_star, xi_pred = [], [xi0]
        w = sol.z
        j = 0
        m = plant.m
        for gam in sched:
            if gam:
                pi = OverallInput(w[j * m : (j + 1) * m], 1)
                j += 1
            else:
                pi = OverallInput.hold(m)
            pi_star.append(pi)
            xi_pred.append(overall_step(xi_pred[-1], pi, plant, spec))
        return OcpSolution(pi_star, xi_pred, float(val), sched, len(schedules), True, N, phase, sol, elapsed)


def solve_ocp(
    xi0: OverallState, k: int, params: OcpParams, plant: PlantModel, spec: TokenBucketSpec
) -> OcpSolution:
    return OcpSolver(params, plant, spec).solve(xi0, k)
