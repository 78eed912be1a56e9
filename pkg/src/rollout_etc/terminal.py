"""Terminal ingredients for the rollout OCP.

Both variants share the terminal policy "transmit ``K [x; u]`` at phase 0,
hold otherwise". ``K = [K_x 0]`` comes from the discrete Riccati equation of
the ``M``-step lifted system ``x+ = A^M x + B_M w`` whose per-cycle cost
``[x; w]' T_M [x; w]`` contains a state/input cross term.

Variant 1 uses a single quadratic terminal cost ``P_0 = diag(P_x, 0)``;
Variant 2 adds ``P_1 .. P_{M-1}`` by the backward recursion
``P_j = A0' P_{j+1} A0 + diag(Q, R)`` which makes every one-step cost
decrease inequality tight.

For constrained plants the terminal sets are ``{z : z' (P_j + eps I) z <=
alpha} intersected with X x U`` with one common ``alpha``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NoConvergence, NotControllable, ValidationError
from .ncs import OverallState, PlantModel, TokenBucketSpec, base_period

ARE_TOL = 1e-12
ARE_MAX_ITER = 100_000
SHAPE_EPS = 1e-9
RANK_TOL = 1e-9


class Variant(enum.IntEnum):
    V1 = 1
    V2 = 2


@dataclass(frozen=True)
class LiftedSystem:
    """M-step lifting of the held-input dynamics.

    ``A0`` is the hold map on ``[x; u]``; the transmit map for a gain ``K``
    is ``A_reset + B_reset K`` (see :meth:`transmit_dynamics`).
    """

    A_M: np.ndarray
    B_M: np.ndarray
    T_M: np.ndarray
    A0: np.ndarray
    A_reset: np.ndarray
    B_reset: np.ndarray
    M: int

    @property
    def n(self) -> int:
        return self.A_M.shape[0]

    @property
    def m(self) -> int:
        return self.B_M.shape[1]

    def cost_blocks(self):
        """Split ``T_M`` into state weight, cross term and input weight."""
        n = self.n
        return self.T_M[:n, :n], self.T_M[:n, n:], self.T_M[n:, n:]

    def transmit_dynamics(self, K: np.ndarray) -> np.ndarray:
        return self.A_reset + self.B_reset @ K


def hold_dynamics(plant: PlantModel) -> np.ndarray:
    n, m = plant.n, plant.m
    A0 = np.eye(n + m)
    A0[:n, :n] = plant.A
    A0[:n, n:] = plant.B
    return A0


def build_lifted(plant: PlantModel, M: int) -> LiftedSystem:
    if M < 1:
        raise ValidationError(f"lifting period must be >= 1, got {M}")
    n, m = plant.n, plant.m
    A0 = hold_dynamics(plant)
    W = plant.stage_weight()

    T = np.zeros((n + m, n + m))
    A_pow = np.eye(n + m)
    for _ in range(M):
        T += A_pow.T @ W @ A_pow
        A_pow = A0 @ A_pow
    T = 0.5 * (T + T.T)
    # A0^M = [[A^M, B_M], [0, I]]
    A_M = A_pow[:n, :n].copy()
    B_M = A_pow[:n, n:].copy()

    A_reset = np.zeros((n + m, n + m))
    A_reset[:n, :n] = plant.A
    B_reset = np.vstack([plant.B, np.eye(m)])
    return LiftedSystem(A_M, B_M, T, A0, A_reset, B_reset, M)


def is_controllable(A: np.ndarray, B: np.ndarray, tol: float = RANK_TOL) -> bool:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if s[0] == 0.0:
        return False
    return int(np.sum(s > tol * s[0])) == n


def riccati_gain(P: np.ndarray, lifted: LiftedSystem) -> np.ndarray:
    A, B = lifted.A_M, lifted.B_M
    _, S, R = lifted.cost_blocks()
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A + S.T)


def riccati_step(P: np.ndarray, lifted: LiftedSystem) -> np.ndarray:
    """One value-iteration step of the cross-term Riccati recursion."""
    A, B = lifted.A_M, lifted.B_M
    Qb, S, R = lifted.cost_blocks()
    G = R + B.T @ P @ B
    L = B.T @ P @ A + S.T
    P_next = Qb + A.T @ P @ A - L.T @ np.linalg.solve(G, L)
    return 0.5 * (P_next + P_next.T)


def solve_are_cross(
    lifted: LiftedSystem, tol: float = ARE_TOL, max_iter: int = ARE_MAX_ITER
) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing solution ``(P_x, K_x)`` of the lifted Riccati equation.

    Fixed-point iteration started at the state weight. The stopping test is
    ``max|P_{i+1} - P_i| <= tol * max(1, max|P_i|)``.
    """
    if not is_controllable(lifted.A_M, lifted.B_M):
        raise NotControllable("lifted pair (A^M, B_M) is not controllable")
    P = lifted.cost_blocks()[0].copy()
    for _ in range(max_iter):
        P_next = riccati_step(P, lifted)
        if not np.all(np.isfinite(P_next)):
            break
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            P = P_next
            K = riccati_gain(P, lifted)
            rho = np.max(np.abs(np.linalg.eigvals(lifted.A_M + lifted.B_M @ K)))
            if rho >= 1.0:
                raise NoConvergence(f"Riccati fixed point is not stabilizing (rho={rho:.6g})")
            return P, K
        P = P_next
    raise NoConvergence(f"Riccati iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    variant: Variant
    M: int
    K: np.ndarray
    P: tuple
    bucket_floor: tuple
    P_x: np.ndarray
    K_x: np.ndarray
    alpha: Optional[tuple] = None
    shape_eps: float = SHAPE_EPS

    def phase_index(self, phase: int) -> int:
        return 0 if self.variant == Variant.V1 else phase % len(self.P)

    def terminal_weight(self, phase: int) -> np.ndarray:
        return self.P[self.phase_index(phase)]

    def floor(self, phase: int) -> int:
        return self.bucket_floor[self.phase_index(phase)]

    def shape(self, phase: int) -> np.ndarray:
        P = self.terminal_weight(phase)
        return P + self.shape_eps * np.eye(P.shape[0])

    def radius(self, phase: int) -> Optional[float]:
        if self.alpha is None:
            return None
        return self.alpha[self.phase_index(phase)]

    def to_dict(self) -> dict:
        return {
            "variant": int(self.variant),
            "M": self.M,
            "K": self.K.tolist(),
            "P": [p.tolist() for p in self.P],
            "bucket_floor": list(self.bucket_floor),
            "alpha": None if self.alpha is None else list(self.alpha),
            "shape_eps": self.shape_eps,
            "P_x": self.P_x.tolist(),
            "K_x": self.K_x.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TerminalIngredients":
        alpha = d.get("alpha")
        return cls(
            variant=Variant(d["variant"]),
            M=int(d["M"]),
            K=np.array(d["K"], dtype=float),
            P=tuple(np.array(p, dtype=float) for p in d["P"]),
            bucket_floor=tuple(int(f) for f in d["bucket_floor"]),
            P_x=np.array(d["P_x"], dtype=float),
            K_x=np.array(d["K_x"], dtype=float),
            alpha=None if alpha is None else tuple(float(a) for a in alpha),
            shape_eps=float(d.get("shape_eps", SHAPE_EPS)),
        )


def _periodic_weights(lifted: LiftedSystem, P0: np.ndarray, W: np.ndarray) -> list:
    M = lifted.M
    P = [None] * M
    P[0] = P0
    nxt = P0
    for j in range(M - 1, 0, -1):
        P[j] = lifted.A0.T @ nxt @ lifted.A0 + W
        P[j] = 0.5 * (P[j] + P[j].T)
        nxt = P[j]
    return P


def _lqr_parts(plant: PlantModel, spec: TokenBucketSpec):
    M = base_period(spec)
    lifted = build_lifted(plant, M)
    P_x, K_x = solve_are_cross(lifted)
    n, m = plant.n, plant.m
    P0 = np.zeros((n + m, n + m))
    P0[:n, :n] = P_x
    K = np.hstack([K_x, np.zeros((m, m))])
    return M, lifted, P_x, K_x, P0, K


def terminal_radius(
    P: Sequence[np.ndarray], K: np.ndarray, plant: PlantModel, M: int, eps: float = SHAPE_EPS
) -> Optional[float]:
    """Largest common ``alpha`` for which the terminal policy never leaves the boxes.

    A set indexed by phase ``j`` is followed by ``M - j`` policy steps up to
    the next phase-0 set (a full cycle for ``j = 0``). Along those steps
    every bounded coordinate of ``x`` and the transmitted input ``K z`` is
    a linear function ``c'z``, whose maximum over the ellipsoid is
    ``sqrt(alpha c' S^-1 c)``. The held input needs no bound: the sets are
    intersected with ``X x U`` and holding keeps ``u``. A common ``alpha``
    makes the chain invariant by the cost decrease inequalities.
    """
    if not plant.constrained:
        return None
    n, m = plant.n, plant.m
    A0 = hold_dynamics(plant)
    A_reset = np.zeros((n + m, n + m))
    A_reset[:n, :n] = plant.A
    A1 = A_reset + np.vstack([plant.B, np.eye(m)]) @ K

    x_rows = []
    if plant.state_box is not None:
        x_rows = [(i, r) for i, r in enumerate(plant.state_box.radius()) if np.isfinite(r)]
    u_rows = []
    if plant.input_box is not None:
        u_rows = [(i, r) for i, r in enumerate(plant.input_box.radius()) if np.isfinite(r)]

    alpha = np.inf
    for j, Pj in enumerate(P):
        S_inv = np.linalg.inv(Pj + eps * np.eye(n + m))
        C = np.eye(n + m)
        pairs = []
        for i in range(M if j == 0 else M - j):
            pairs += [(C[r], bound) for r, bound in x_rows]
            if j == 0 and i == 0:
                pairs += [(K[r], bound) for r, bound in u_rows]
            C = (A1 if j == 0 and i == 0 else A0) @ C
        for c, bound in pairs:
            spread = float(c @ S_inv @ c)
            if spread > 0:
                alpha = min(alpha, bound**2 / spread)
    return None if not np.isfinite(alpha) else float(alpha)


def variant1_ingredients(plant: PlantModel, spec: TokenBucketSpec) -> TerminalIngredients:
    M, lifted, P_x, K_x, P0, K = _lqr_parts(plant, spec)
    alpha = None
    if plant.constrained:
        alpha = (terminal_radius((P0,), K, plant, M),)
    return TerminalIngredients(
        variant=Variant.V1,
        M=M,
        K=K,
        P=(P0,),
        bucket_floor=(spec.c - spec.g,),
        P_x=P_x,
        K_x=K_x,
        alpha=alpha,
    )


def variant2_ingredients(plant: PlantModel, spec: TokenBucketSpec) -> TerminalIngredients:
    M, lifted, P_x, K_x, P0, K = _lqr_parts(plant, spec)
    P = _periodic_weights(lifted, P0, plant.stage_weight())
    floors = [spec.c - spec.g] + [(j - 1) * spec.g for j in range(1, M)]
    alpha = None
    if plant.constrained:
        alpha = (terminal_radius(P, K, plant, M),) * M
    return TerminalIngredients(
        variant=Variant.V2,
        M=M,
        K=K,
        P=tuple(P),
        bucket_floor=tuple(floors),
        P_x=P_x,
        K_x=K_x,
        alpha=alpha,
    )


def synthesize(plant: PlantModel, spec: TokenBucketSpec, variant) -> TerminalIngredients:
    if Variant(variant) == Variant.V1:
        return variant1_ingredients(plant, spec)
    return variant2_ingredients(plant, spec)


@dataclass
class CostDecreaseReport:
    variant: Variant
    max_eigenvalues: list
    residuals: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_eigenvalues)

    @property
    def worst(self) -> float:
        return max(self.max_eigenvalues)


def _max_eig(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).max())


def cycle_decrease_residual(
    P0: np.ndarray, K: np.ndarray, plant: PlantModel, M: int
) -> np.ndarray:
    """Left-hand side of the M-step cost decrease inequality (Variant 1)."""
    n, m = plant.n, plant.m
    lifted = build_lifted(plant, M)
    A0, A1 = lifted.A0, lifted.transmit_dynamics(K)
    W = plant.stage_weight()
    Qx = np.zeros_like(W)
    Qx[:n, :n] = plant.Q
    lhs = -P0 + Qx + K.T @ plant.R @ K
    A_j = A1.copy()
    for _ in range(1, M):
        lhs += A_j.T @ W @ A_j
        A_j = A0 @ A_j
    lhs += A_j.T @ P0 @ A_j
    return lhs


def periodic_decrease_residuals(
    P: Sequence[np.ndarray], K: np.ndarray, plant: PlantModel
) -> list[np.ndarray]:
    """Left-hand sides of the M one-step cost decrease inequalities (Variant 2)."""
    n, m = plant.n, plant.m
    M = len(P)
    lifted = build_lifted(plant, 1)
    A0, A1 = lifted.A0, lifted.transmit_dynamics(K)
    W = plant.stage_weight()
    Qx = np.zeros_like(W)
    Qx[:n, :n] = plant.Q
    out = [A1.T @ P[1 % M] @ A1 - P[0] + Qx + K.T @ plant.R @ K]
    for j in range(1, M):
        out.append(A0.T @ P[(j + 1) % M] @ A0 - P[j] + W)
    return out


def verify_cost_decrease(
    ing: TerminalIngredients, plant: PlantModel, spec: TokenBucketSpec, tol: float = 1e-8
) -> CostDecreaseReport:
    if ing.variant == Variant.V1:
        res = [cycle_decrease_residual(ing.P[0], ing.K, plant, base_period(spec))]
    else:
        res = periodic_decrease_residuals(ing.P, ing.K, plant)
    return CostDecreaseReport(ing.variant, [_max_eig(r) for r in res], res, tol)


def terminal_membership(
    xi: OverallState,
    phase: int,
    ing: TerminalIngredients,
    plant: PlantModel,
    spec: TokenBucketSpec,
) -> bool:
    if not (ing.floor(phase) <= xi.beta <= spec.b):
        return False
    if ing.alpha is None:
        return True
    z = xi.z
    if plant.state_box is not None and not plant.state_box.contains(xi.x):
        return False
    if plant.input_box is not None and not plant.input_box.contains(xi.u):
        return False
    return bool(z @ ing.shape(phase) @ z <= ing.radius(phase))


def bucket_floor_is_invariant(floors: Sequence[int], spec: TokenBucketSpec) -> bool:
    """The floors are preserved by the terminal policy's transmit/hold pattern.

    A single floor is checked over a whole cycle: transmit once, then hold
    for ``M - 1`` steps.
    """
    g, c, b = spec.g, spec.c, spec.b
    if len(floors) == 1:
        beta = floors[0] + g - c
        if beta < 0:
            return False
        for _ in range(base_period(spec) - 1):
            beta = min(beta + g, b)
        return beta >= floors[0]
    M = len(floors)
    ok = floors[0] + g - c >= floors[1]
    for j in range(1, M):
        ok = ok and min(floors[j] + g, b) >= floors[(j + 1) % M]
    return bool(ok)
