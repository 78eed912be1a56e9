"""Closed-loop decision laws: rollout ETC and the TTC / classical ETC baselines."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import InfeasibleTransmission, OcpInfeasible, ValidationError
from .ncs import OverallInput, OverallState, PlantModel, TokenBucketSpec
from .ocp import OcpParams, OcpSolution, OcpSolver


def rollout_step(
    xi: OverallState,
    k: int,
    params: OcpParams,
    plant: PlantModel,
    spec: TokenBucketSpec,
    solver: Optional[OcpSolver] = None,
) -> tuple[OverallInput, OcpSolution]:
    """Apply the first element of the optimal overall input sequence."""
    if solver is None:
        solver = OcpSolver(params, plant, spec)
    sol = solver.solve(xi, k)
    if not sol.feasible:
        raise OcpInfeasible("no transmission schedule admits a feasible trajectory", step=k)
    return sol.pi_star[0], sol


def ttc_step(
    xi: OverallState,
    k: int,
    gain: np.ndarray,
    M: int,
    spec: Optional[TokenBucketSpec] = None,
) -> OverallInput:
    """Periodic transmission of ``K_x x`` at phases ``k mod M == 0``.

    When ``spec`` is given the bucket precondition is checked up front.
    """
    gain = np.atleast_2d(gain)
    if k % M != 0:
        return OverallInput.hold(gain.shape[0])
    if spec is not None and xi.beta + spec.g - spec.c < 0:
        raise InfeasibleTransmission(
            f"step {k}: periodic transmission needs beta >= {spec.c - spec.g}, have {xi.beta}"
        )
    return OverallInput(gain @ xi.x, 1)


class EtcMemory:
    """Last transmitted plant state of the classical ETC."""

    def __init__(self):
        self.x_last: Optional[np.ndarray] = None


def etc_step(
    xi: OverallState, k: int, gain: np.ndarray, sigma_trigger: float, memory: EtcMemory
) -> OverallInput:
    gain = np.atleast_2d(gain)
    x = xi.x
    if memory.x_last is None or k == 0:
        fire = True
    else:
        e = memory.x_last - x
        fire = float(e @ e) > sigma_trigger * float(x @ x)
    if not fire:
        return OverallInput.hold(gain.shape[0])
    memory.x_last = np.array(x)
    return OverallInput(gain @ x, 1)


class Controller:
    name = "controller"
    # baselines that ignore the traffic contract set this to False
    enforces_bucket = True

    def reset(self):
        pass

    def step(self, xi: OverallState, k: int) -> tuple[OverallInput, Optional[OcpSolution]]:
        raise NotImplementedError


class RolloutETC(Controller):
    name = "rollout"

    def __init__(self, params: OcpParams, plant: PlantModel, spec: TokenBucketSpec):
        self.params = params
        self.solver = OcpSolver(params, plant, spec)

    def step(self, xi, k):
        return rollout_step(xi, k, self.params, self.solver.plant, self.solver.spec, self.solver)


class TTC(Controller):
    name = "ttc"

    def __init__(self, gain, M: int, spec: Optional[TokenBucketSpec] = None):
        if M < 1:
            raise ValidationError(f"TTC period must be >= 1, got {M}")
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.M = M
        self.spec = spec
        self.phase = 0

    def reset(self):
        self.phase = 0

    def step(self, xi, k):
        pi = ttc_step(xi, self.phase, self.gain, self.M, self.spec)
        self.phase = (self.phase + 1) % self.M
        return pi, None


class ClassicalETC(Controller):
    name = "etc"
    enforces_bucket = False

    def __init__(self, gain, sigma_trigger: float):
        if not 0.0 <= sigma_trigger <= 1.0:
            raise ValidationError(f"sigma_trigger must lie in [0, 1], got {sigma_trigger}")
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.sigma_trigger = float(sigma_trigger)
        self.memory = EtcMemory()

    def reset(self):
        self.memory = EtcMemory()

    def step(self, xi, k):
        return etc_step(xi, k, self.gain, self.sigma_trigger, self.memory), None
