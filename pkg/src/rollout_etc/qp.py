"""Small dense convex QP solver.

Solves ``min 1/2 z'Hz + f'z  s.t.  G z <= h`` with an optional ellipsoidal
constraint ``(Gamma z + c)' S (Gamma z + c) <= r``. Linear constraints are
handled by a primal active-set method; the ellipsoid by bisection on its
Lagrange multiplier, where each trial multiplier is a linearly constrained
QP with Hessian ``H + 2 mu Gamma' S Gamma``.

Problem sizes are tiny (a dozen variables), so everything is dense.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import SingularHessian

HESSIAN_EPS = 1e-10
FEAS_TOL = 1e-9
MULT_TOL = 1e-9


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class EllipsoidConstraint:
    """``(Gamma z + offset)' shape (Gamma z + offset) <= radius``."""

    shape: np.ndarray
    radius: float
    Gamma: np.ndarray
    offset: np.ndarray

    def quadratic(self):
        """Return ``(Hq, fq, cq)`` with ``value(z) = 1/2 z'Hq z + fq'z + cq``."""
        SG = self.shape @ self.Gamma
        Hq = 2.0 * self.Gamma.T @ SG
        fq = 2.0 * SG.T @ self.offset
        cq = float(self.offset @ self.shape @ self.offset) - self.radius
        return 0.5 * (Hq + Hq.T), fq, cq

    def value(self, z: np.ndarray) -> float:
        y = self.Gamma @ z + self.offset
        return float(y @ self.shape @ y) - self.radius


@dataclass(frozen=True)
class DenseQP:
    H: np.ndarray
    f: np.ndarray
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    ellipsoids: tuple = ()

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be square, got {H.shape}")
        H = 0.5 * (H + H.T)
        f = np.asarray(self.f, dtype=float).reshape(d)
        G = np.zeros((0, d)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, d)
        h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        if G.shape[0] != h.size:
            raise ValueError("G and h disagree in the number of constraints")
        if len(self.ellipsoids) > 1:
            raise ValueError("at most one ellipsoidal constraint is supported")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def is_feasible(self, z: np.ndarray, tol: float = 1e-8) -> bool:
        if self.p and np.any(self.G @ z - self.h > tol):
            return False
        return all(e.value(z) <= tol for e in self.ellipsoids)


@dataclass
class QpSolution:
    z: np.ndarray
    value: float
    status: QpStatus
    active_set: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ellipsoid_multiplier: float = 0.0
    iterations: int = 0
    regularization: float = HESSIAN_EPS
    objective_history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _factor(H: np.ndarray, eps: float):
    try:
        return scipy.linalg.cho_factor(H + eps * np.eye(H.shape[0]), lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularHessian(f"Hessian factorization failed: {exc}") from exc


def solve_unconstrained(H, f, eps: float = HESSIAN_EPS) -> QpSolution:
    """Minimize ``1/2 z'Hz + f'z`` by a Cholesky solve of ``(H + eps I) z = -f``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size == 0:
        return QpSolution(np.zeros(0), 0.0, QpStatus.OPTIMAL, regularization=eps)
    z = -scipy.linalg.cho_solve(_factor(H, eps), f)
    value = float(0.5 * z @ H @ z + f @ z)
    return QpSolution(z, value, QpStatus.OPTIMAL, regularization=eps, objective_history=[value])


def _bounds_only(G: np.ndarray) -> bool:
    return bool(np.all(np.count_nonzero(G, axis=1) == 1))


def _phase_one(G: np.ndarray, h: np.ndarray, z_hint: np.ndarray) -> Optional[np.ndarray]:
    """A point satisfying ``G z <= h`` or None if the polyhedron is empty."""
    d = G.shape[1]
    if _bounds_only(G):
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        for row, rhs in zip(G, h):
            j = int(np.flatnonzero(row)[0])
            a = row[j]
            if a > 0:
                hi[j] = min(hi[j], rhs / a)
            else:
                lo[j] = max(lo[j], rhs / a)
        if np.any(lo > hi + FEAS_TOL):
            return None
        return np.clip(z_hint, lo, np.maximum(lo, hi))
    res = linprog(
        np.zeros(d), A_ub=G, b_ub=h, bounds=[(None, None)] * d, method="highs"
    )
    if res.status != 0:
        return None
    return np.asarray(res.x, dtype=float)


def _independent(rows: np.ndarray, candidate: np.ndarray) -> bool:
    if rows.shape[0] == 0:
        return bool(np.any(candidate != 0))
    stacked = np.vstack([rows, candidate])
    return np.linalg.matrix_rank(stacked, tol=1e-10 * max(1.0, np.abs(stacked).max())) == stacked.shape[0]


def _solve_linear(
    H: np.ndarray,
    f: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    z0: Optional[np.ndarray],
    eps: float,
    max_iter: Optional[int] = None,
) -> QpSolution:
    d, p = H.shape[0], G.shape[0]
    Hr = H + eps * np.eye(d)
    objective = lambda z: float(0.5 * z @ H @ z + f @ z)  # noqa: E731

    factor = _factor(H, eps)
    z_u = -scipy.linalg.cho_solve(factor, f)
    if p == 0 or np.all(G @ z_u - h <= FEAS_TOL):
        slack = h - G @ z_u if p else np.zeros(0)
        active = tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= FEAS_TOL))
        val = objective(z_u)
        return QpSolution(z_u, val, QpStatus.OPTIMAL, active, np.zeros(len(active)),
                          iterations=0, regularization=eps, objective_history=[val])

    if z0 is None or np.any(G @ z0 - h > FEAS_TOL):
        z0 = _phase_one(G, h, z_u)
        if z0 is None:
            return QpSolution(np.full(d, np.nan), np.inf, QpStatus.INFEASIBLE, regularization=eps)
    z = np.array(z0, dtype=float)
    # slide toward the unconstrained minimizer as far as feasibility allows;
    # the objective is convex, so this never increases it
    direction = z_u - z
    Gd = G @ direction
    rising = Gd > 0
    if rising.any():
        t = float(np.min(np.maximum(h[rising] - G[rising] @ z, 0.0) / Gd[rising]))
        z = z + min(t, 1.0) * direction

    working: list[int] = []
    for i in np.flatnonzero(np.abs(G @ z - h) <= FEAS_TOL):
        if len(working) < d and _independent(G[working], G[i]):
            working.append(int(i))

    budget = max_iter if max_iter is not None else 50 * (d + p)
    history = [objective(z)]
    lam = np.zeros(0)
    row_norm = np.linalg.norm(G, axis=1)
    for it in range(1, budget + 1):
        g = Hr @ z + f
        k = len(working)
        if k >= d:
            # vertex: the null space is empty, so the step is exactly zero
            Aw = G[working]
            lam = np.linalg.solve(Aw.T, -g) if k == d else np.linalg.lstsq(Aw.T, -g, rcond=None)[0]
            step = np.zeros(d)
        elif k:
            Aw = G[working]
            kkt = np.block([[Hr, Aw.T], [Aw, np.zeros((k, k))]])
            sol = np.linalg.solve(kkt, np.concatenate([-g, np.zeros(k)]))
            step, lam = sol[:d], sol[d:]
        else:
            step = -scipy.linalg.cho_solve(factor, g)
            lam = np.zeros(0)

        # stationary on the working set: negligible step, or a step whose
        # predicted decrease is lost in round-off (ill-conditioned Hessians)
        decrease = -(g @ step + 0.5 * step @ Hr @ step)
        if (
            np.max(np.abs(step)) <= 1e-10 * max(1.0, np.max(np.abs(z)))
            or decrease <= 1e-15 * max(1.0, abs(objective(z)))
        ):
            if k == 0 or lam.min() >= -MULT_TOL:
                return QpSolution(z, objective(z), QpStatus.OPTIMAL, tuple(working), lam,
                                  iterations=it, regularization=eps, objective_history=history)
            # np.argmin returns the first minimizer; working is kept sorted
            working.pop(int(np.argmin(lam)))
            continue

        t_best, block = 1.0, None
        Gp = G @ step
        slack = h - G @ z
        blocking = Gp > 1e-12 * row_norm * np.linalg.norm(step)
        blocking[working] = False
        if blocking.any():
            idx = np.flatnonzero(blocking)
            ratios = np.maximum(slack[idx], 0.0) / Gp[idx]
            # argmin picks the lowest index among equal ratios
            j = int(np.argmin(ratios))
            if ratios[j] < t_best:
                t_best, block = float(ratios[j]), int(idx[j])
        z = z + t_best * step
        history.append(objective(z))
        if block is not None:
            working.append(block)
            working.sort()

    return QpSolution(z, objective(z), QpStatus.ITER_LIMIT, tuple(working), lam,
                      iterations=budget, regularization=eps, objective_history=history)


def _solve_with_ellipsoid(qp: DenseQP, z0, eps: float) -> QpSolution:
    ell = qp.ellipsoids[0]
    base = _solve_linear(qp.H, qp.f, qp.G, qp.h, z0, eps)
    if not base.optimal or ell.value(base.z) <= FEAS_TOL:
        return base

    Hq, fq, _ = ell.quadratic()
    scale = max(1.0, abs(ell.radius))
    # near-smallest reachable ellipsoid value under the linear constraints;
    # Hq is rank deficient in general, so a sliver of the objective Hessian
    # keeps this subproblem well conditioned
    delta = 1e-6 * max(np.trace(Hq), 1e-300) / max(np.trace(qp.H), 1e-300)
    closest = _solve_linear(Hq + delta * qp.H, fq + delta * qp.f, qp.G, qp.h, base.z, eps)
    if not closest.optimal or ell.value(closest.z) > FEAS_TOL * scale:
        return QpSolution(np.full(qp.d, np.nan), np.inf, QpStatus.INFEASIBLE, regularization=eps)

    def at(mu, start):
        return _solve_linear(qp.H + mu * Hq, qp.f + mu * fq, qp.G, qp.h, start, eps)

    mu_lo, lo_sol = 0.0, base
    mu_hi = max(np.trace(qp.H), 1e-12) / max(np.trace(Hq), 1e-300)
    hi_sol = at(mu_hi, base.z)
    while hi_sol.optimal and ell.value(hi_sol.z) > 0.0:
        mu_lo, lo_sol = mu_hi, hi_sol
        mu_hi *= 4.0
        if mu_hi > 1e30:
            break
        hi_sol = at(mu_hi, lo_sol.z)
    if not hi_sol.optimal or ell.value(hi_sol.z) > 0.0:
        z = closest.z
        if ell.value(z) > FEAS_TOL * scale:
            return QpSolution(np.full(qp.d, np.nan), np.inf, QpStatus.INFEASIBLE, regularization=eps)
        val = qp.objective(z)
        return QpSolution(z, val, QpStatus.OPTIMAL, closest.active_set, closest.multipliers,
                          ellipsoid_multiplier=np.inf, iterations=closest.iterations,
                          regularization=eps, objective_history=[val])

    iterations = base.iterations + hi_sol.iterations
    for _ in range(200):
        if mu_hi - mu_lo <= 1e-12 * mu_hi or ell.value(hi_sol.z) >= -1e-10 * scale:
            break
        mu = 0.5 * (mu_lo + mu_hi)
        sol = at(mu, hi_sol.z)
        iterations += sol.iterations
        if ell.value(sol.z) > 0.0:
            mu_lo = mu
        else:
            mu_hi, hi_sol = mu, sol
    z = hi_sol.z
    val = qp.objective(z)
    return QpSolution(z, val, QpStatus.OPTIMAL, hi_sol.active_set, hi_sol.multipliers,
                      ellipsoid_multiplier=mu_hi, iterations=iterations,
                      regularization=eps, objective_history=[val])


def solve_active_set(qp: DenseQP, z0: Optional[Sequence[float]] = None, eps: float = HESSIAN_EPS) -> QpSolution:
    """Solve a :class:`DenseQP`.

    ``z0`` is an optional feasible warm start; when it is missing or
    infeasible a feasible point is found first (clipping for pure bounds,
    an LP otherwise).
    """
    if z0 is not None:
        z0 = np.asarray(z0, dtype=float).reshape(-1)
    if qp.d == 0:
        z = np.zeros(0)
        ok = qp.is_feasible(z, tol=FEAS_TOL)
        status = QpStatus.OPTIMAL if ok else QpStatus.INFEASIBLE
        return QpSolution(z, 0.0 if ok else np.inf, status, regularization=eps)
    if qp.ellipsoids:
        return _solve_with_ellipsoid(qp, z0, eps)
    return _solve_linear(qp.H, qp.f, qp.G, qp.h, z0, eps)


def kkt_residual(qp: DenseQP, sol: QpSolution) -> float:
    """Stationarity residual of the returned point and multipliers."""
    g = (qp.H + sol.regularization * np.eye(qp.d)) @ sol.z + qp.f
    if sol.active_set:
        g = g + qp.G[list(sol.active_set)].T @ sol.multipliers
    if qp.ellipsoids and np.isfinite(sol.ellipsoid_multiplier) and sol.ellipsoid_multiplier > 0:
        Hq, fq, _ = qp.ellipsoids[0].quadratic()
        g = g + sol.ellipsoid_multiplier * (Hq @ sol.z + fq)
    return float(np.max(np.abs(g))) if g.size else 0.0
