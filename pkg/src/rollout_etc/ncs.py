"""Networked control system model: plant, token bucket and composite dynamics.

The overall state is ``xi = (x, u, beta)``: plant state, input held by the
zero-order-hold actuator, and integer token-bucket level. The overall input
is ``pi = (v, gamma)``: control update and binary transmission decision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleTransmission, ValidationError


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 1:
        arr = arr.reshape(-1)
    elif arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Box:
    """Per-coordinate interval constraint ``lower <= z <= upper``.

    Infinite bounds are allowed. Only boxes are supported; general
    polytopes are out of scope.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _frozen(self.lower, 1, "lower"))
        object.__setattr__(self, "upper", _frozen(self.upper, 1, "upper"))
        if self.lower.shape != self.upper.shape:
            raise ValidationError("box lower/upper bounds differ in length")

    @classmethod
    def symmetric(cls, bounds) -> "Box":
        b = np.abs(np.asarray(bounds, dtype=float))
        return cls(-b, b)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, z, tol: float = 0.0) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))

    def contains_origin_strictly(self) -> bool:
        return bool(np.all(self.lower < 0) and np.all(self.upper > 0))

    def radius(self) -> np.ndarray:
        """Largest symmetric half-width fitting in the box, per coordinate."""
        return np.minimum(-self.lower, self.upper)


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time LTI plant ``x+ = A x + B u`` with quadratic weights."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    state_box: Optional[Box] = None
    input_box: Optional[Box] = None
    name: str = field(default="plant", compare=False)

    def __post_init__(self):
        for key in ("A", "B", "Q", "R"):
            object.__setattr__(self, key, _frozen(getattr(self, key), 2, key))
        problems = plant_violations(self)
        if problems:
            raise ValidationError(problems)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def constrained(self) -> bool:
        return self.state_box is not None or self.input_box is not None

    def stage_weight(self) -> np.ndarray:
        """``diag(Q, R)`` acting on ``[x; u]``."""
        n, m = self.n, self.m
        W = np.zeros((n + m, n + m))
        W[:n, :n] = self.Q
        W[n:, n:] = self.R
        return W


def _is_spd(M: np.ndarray) -> bool:
    if M.shape[0] != M.shape[1]:
        return False
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0)


def plant_violations(plant: PlantModel) -> list[str]:
    out = []
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.R
    if A.shape[0] != A.shape[1]:
        out.append(f"A must be square, got {A.shape}")
    n = A.shape[0]
    if B.shape[0] != n:
        out.append(f"B must have {n} rows, got {B.shape[0]}")
    m = B.shape[1]
    if Q.shape != (n, n):
        out.append(f"Q must be {n}x{n}, got {Q.shape}")
    elif not _is_spd(Q):
        out.append("Q must be symmetric positive definite")
    if R.shape != (m, m):
        out.append(f"R must be {m}x{m}, got {R.shape}")
    elif not _is_spd(R):
        out.append("R must be symmetric positive definite")
    for label, box, dim in (("state_box", plant.state_box, n), ("input_box", plant.input_box, m)):
        if box is None:
            continue
        if box.dim != dim:
            out.append(f"{label} must have {dim} coordinates, got {box.dim}")
        elif not box.contains_origin_strictly():
            out.append(f"{label} must contain the origin in its interior")
    return out


@dataclass(frozen=True)
class TokenBucketSpec:
    """Token bucket traffic specification.

    ``g`` tokens arrive per step, a transmission costs ``c`` tokens and the
    bucket holds at most ``b``. Requires ``1 <= g <= c <= b``.
    """

    g: int
    c: int
    b: int

    def __post_init__(self):
        problems = []
        for key in ("g", "c", "b"):
            val = getattr(self, key)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                if isinstance(val, float) and val.is_integer():
                    object.__setattr__(self, key, int(val))
                else:
                    problems.append(f"{key} must be an integer, got {val!r}")
        if problems:
            raise ValidationError(problems)
        if self.g < 1:
            problems.append(f"g must be >= 1, got {self.g}")
        if self.c < self.g:
            problems.append(f"c must be >= g, got c={self.c}, g={self.g}")
        if self.b < self.c:
            problems.append(f"b must be >= c, got b={self.b}, c={self.c}")
        if problems:
            raise ValidationError(problems)

    @property
    def sustainable_rate(self) -> float:
        return self.g / self.c

    @property
    def M(self) -> int:
        return base_period(self)


@dataclass(frozen=True)
class OverallState:
    x: np.ndarray
    u: np.ndarray
    beta: int

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, 1, "x"))
        object.__setattr__(self, "u", _frozen(self.u, 1, "u"))
        # bucket range is not enforced here: the classical ETC baseline keeps
        # unenforced bookkeeping that may go negative
        object.__setattr__(self, "beta", int(self.beta))

    @property
    def z(self) -> np.ndarray:
        """Stacked ``[x; u]``."""
        return np.concatenate([self.x, self.u])


@dataclass(frozen=True)
class OverallInput:
    v: np.ndarray
    gamma: int

    def __post_init__(self):
        if self.gamma not in (0, 1):
            raise ValidationError(f"gamma must be 0 or 1, got {self.gamma!r}")
        object.__setattr__(self, "gamma", int(self.gamma))
        v = np.array(self.v, dtype=float).reshape(-1)
        if self.gamma == 0:
            v = np.zeros_like(v)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @classmethod
    def hold(cls, m: int) -> "OverallInput":
        return cls(np.zeros(m), 0)


def base_period(spec: TokenBucketSpec) -> int:
    """Guaranteed transmission period ``M = ceil(c / g)``."""
    return -(-spec.c // spec.g)


def bucket_step(beta: int, gamma: int, spec: TokenBucketSpec) -> int:
    """Saturating bucket update ``min(beta + g - gamma*c, b)``."""
    nxt = beta + spec.g - gamma * spec.c
    if gamma == 1 and nxt < 0:
        raise InfeasibleTransmission(
            f"transmission needs beta + g - c >= 0, got {beta} + {spec.g} - {spec.c} = {nxt}"
        )
    return min(nxt, spec.b)


def overall_step(
    xi: OverallState,
    pi: OverallInput,
    plant: PlantModel,
    spec: TokenBucketSpec,
    enforce_bucket: bool = True,
) -> OverallState:
    """Advance the composite state by one step.

    With ``enforce_bucket=False`` the bucket is updated without the
    feasibility check, for baselines that ignore the traffic contract.
    """
    u_applied = pi.v if pi.gamma == 1 else xi.u
    x_next = plant.A @ xi.x + plant.B @ u_applied
    if enforce_bucket:
        beta_next = bucket_step(xi.beta, pi.gamma, spec)
    else:
        beta_next = min(xi.beta + spec.g - pi.gamma * spec.c, spec.b)
    return OverallState(x_next, u_applied, beta_next)


def stage_cost(xi: OverallState, pi: OverallInput, plant: PlantModel) -> float:
    x = xi.x
    u = pi.v if pi.gamma == 1 else xi.u
    return float(x @ plant.Q @ x + u @ plant.R @ u)


def in_constraint_set(xi: OverallState, plant: PlantModel, spec: TokenBucketSpec) -> bool:
    if not 0 <= xi.beta <= spec.b:
        return False
    if plant.state_box is not None and not plant.state_box.contains(xi.x):
        return False
    if plant.input_box is not None and not plant.input_box.contains(xi.u):
        return False
    return True


def sustainable_transmissions(beta_start: int, window: int, spec: TokenBucketSpec) -> float:
    """Upper bound on transmissions in a window by token conservation."""
    return (beta_start + window * spec.g) / spec.c


__all__ = [
    "Box",
    "PlantModel",
    "TokenBucketSpec",
    "OverallState",
    "OverallInput",
    "base_period",
    "bucket_step",
    "overall_step",
    "stage_cost",
    "in_constraint_set",
    "sustainable_transmissions",
]
