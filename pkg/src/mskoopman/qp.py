"""Condensed MPC quadratic program and a dense primal active-set solver.

The predicted states are ``X = E psi(x_t) + F U``; with
``Qbar = blkdiag(Q, ..., Q, P)`` and ``Rbar = blkdiag(R, ..., R)`` the cost
``U'Rbar U + X'Qbar X`` equals ``0.5 U'HU + g'U + c`` with
``H = 2 (Rbar + F'Qbar F)``, ``g = 2 F'Qbar E psi`` and
``c = (E psi)'Qbar (E psi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog, nnls

from .edmd_multistep import CondensedModel
from .errors import ContractViolation, InfeasibleQPError

log = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_ITERATION_CAP = "iteration_cap"


def _vec(v, n, fill):
    if v is None:
        return np.full(n, fill)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 1:
        v = np.full(n, v[0])
    if v.shape != (n,):
        raise ContractViolation(f"bound has {v.size} entries, expected {n}")
    return v


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Weights, bounds and horizon of the regulation problem.

    ``u_min``/``u_max`` and ``x_min``/``x_max`` may contain infinities;
    ``None`` means unbounded.
    """

    H: int
    Q: np.ndarray
    R: np.ndarray
    P_term: np.ndarray
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None
    x_min: Optional[np.ndarray] = None
    x_max: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.H < 1:
            raise ContractViolation("horizon must be positive")
        Q, R, P = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.Q, self.R, self.P_term))
        n_x, n_u = Q.shape[0], R.shape[0]
        if Q.shape != (n_x, n_x) or P.shape != (n_x, n_x) or R.shape != (n_u, n_u):
            raise ContractViolation("Q and P_term must be n_x square, R n_u square")
        for name, m in (("Q", Q), ("R", R), ("P_term", P)):
            if not np.allclose(m, m.T, rtol=0, atol=1e-12 * (1 + np.abs(m).max())):
                raise ContractViolation(f"{name} must be symmetric")
        tol = 1e-12
        if np.linalg.eigvalsh(Q).min() < -tol or np.linalg.eigvalsh(P).min() < -tol:
            raise ContractViolation("Q and P_term must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ContractViolation("R must be positive definite")
        bounds = {
            "u_min": _vec(self.u_min, n_u, -np.inf), "u_max": _vec(self.u_max, n_u, np.inf),
            "x_min": _vec(self.x_min, n_x, -np.inf), "x_max": _vec(self.x_max, n_x, np.inf),
        }
        if np.any(bounds["u_min"] > bounds["u_max"]) or np.any(bounds["x_min"] > bounds["x_max"]):
            raise ContractViolation("bounds must satisfy min <= max")
        for name, m in (("Q", Q), ("R", R), ("P_term", P), *bounds.items()):
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True, eq=False)
class QpProblem:
    """``min 0.5 U'HU + g'U + c`` s.t. ``lb <= U <= ub``, ``A U <= b``."""

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float
    lb: np.ndarray
    ub: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray

    def __post_init__(self):
        n = self.gradient.shape[0]
        if self.hessian.shape != (n, n) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ContractViolation("inconsistent QP dimensions")
        if self.A_ineq.shape != (self.b_ineq.shape[0], n):
            raise ContractViolation("inconsistent inequality rows")
        if not (np.isfinite(self.hessian).all() and np.isfinite(self.gradient).all()
                and np.isfinite(self.A_ineq).all() and np.isfinite(self.b_ineq).all()):
            raise ContractViolation("QP data must be finite")

    @property
    def n(self) -> int:
        return self.gradient.shape[0]

    def objective(self, U) -> float:
        U = np.asarray(U, dtype=float)
        return float(0.5 * U @ self.hessian @ U + self.gradient @ U + self.constant)

    def rows(self):
        """All constraints as ``a'U <= b`` rows (lower box, upper box, affine)."""
        I = np.eye(self.n)
        lo = np.isfinite(self.lb)
        hi = np.isfinite(self.ub)
        A = np.vstack([-I[lo], I[hi], self.A_ineq])
        b = np.concatenate([-self.lb[lo], self.ub[hi], self.b_ineq])
        kind = np.concatenate([np.full(lo.sum(), 0), np.full(hi.sum(), 1),
                               np.full(self.b_ineq.size, 2)])
        var = np.concatenate([np.flatnonzero(lo), np.flatnonzero(hi),
                              np.full(self.b_ineq.size, -1)])
        return A, b, kind, var


def build_qp(model: CondensedModel, cfg: MpcConfig, x_t) -> QpProblem:
    """Assemble the condensed QP at the measured state ``x_t``.

    The model is truncated to ``cfg.H`` steps; ``psi(x_t)`` is evaluated once.
    """
    if model.H < cfg.H:
        raise ContractViolation(f"model horizon {model.H} shorter than MPC horizon {cfg.H}")
    if model.n_x != cfg.n_x or model.n_u != cfg.n_u:
        raise ContractViolation("model and MPC dimensions differ")
    m = model if model.H == cfg.H else model.truncated(cfg.H)
    psi = m.dictionary.lift(np.asarray(x_t, dtype=float))
    E, F = m.E, m.F
    free = E @ psi
    Qbar = block_diag(*([cfg.Q] * (cfg.H - 1) + [cfg.P_term]))
    Rbar = block_diag(*([cfg.R] * cfg.H))
    QF = Qbar @ F
    hess = 2.0 * (Rbar + F.T @ QF)
    hess = 0.5 * (hess + hess.T)
    grad = 2.0 * (QF.T @ free)
    const = float(free @ Qbar @ free)
    lam_min = np.linalg.eigvalsh(hess).min()
    guard = 2.0 * np.linalg.eigvalsh(cfg.R).min()
    if lam_min < guard * (1 - 1e-8):
        raise ContractViolation(f"Hessian min eigenvalue {lam_min:g} below 2 lambda_min(R)={guard:g}")
    xmax = np.tile(cfg.x_max, cfg.H)
    xmin = np.tile(cfg.x_min, cfg.H)
    up, lo = np.isfinite(xmax), np.isfinite(xmin)
    A = np.vstack([F[up], -F[lo]])
    b = np.concatenate([xmax[up] - free[up], -(xmin[lo] - free[lo])])
    return QpProblem(hess, grad, const, np.tile(cfg.u_min, cfg.H), np.tile(cfg.u_max, cfg.H), A, b)


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Solver output.

    ``lambda_lower``/``lambda_upper`` are box multipliers per variable and
    ``lambda_ineq`` the multipliers of the affine rows, all nonnegative at
    optimality.
    """

    U: np.ndarray
    status: str
    iterations: int
    objective: float
    lambda_lower: np.ndarray
    lambda_upper: np.ndarray
    lambda_ineq: np.ndarray

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


def _phase_one(qp: QpProblem, x0):
    """Feasible point for the affine rows, or an infeasibility certificate."""
    n, m = qp.n, qp.b_ineq.size
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A = np.hstack([qp.A_ineq, -np.ones((m, 1))])
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u)
              for l, u in zip(qp.lb, qp.ub)] + [(0, None)]
    res = linprog(c, A_ub=A, b_ub=qp.b_ineq, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleQPError(f"phase-1 LP failed: {res.message}", np.inf, None)
    viol = float(res.x[-1])
    scale = 1.0 + np.abs(qp.b_ineq).max(initial=0.0)
    if viol > 1e-9 * scale:
        raise InfeasibleQPError(f"state constraints infeasible (min violation {viol:.3g})",
                                viol, -res.ineqlin.marginals)
    return res.x[:n]


def _independent(rows: np.ndarray, candidates) -> list:
    chosen = []
    for i in candidates:
        trial = chosen + [i]
        if np.linalg.matrix_rank(rows[trial]) == len(trial):
            chosen = trial
    return chosen


def solve_qp(qp: QpProblem, warm_start=None, max_iter: int = 1000,
             tol: float = 1e-10) -> QpSolution:
    """Primal active-set method for the strictly convex QP.

    The start point is the warm start projected onto the box (zero when
    absent). If it violates an affine row, a phase-1 LP supplies a feasible
    point or raises :class:`InfeasibleQPError`. The initial working set is a
    linearly independent subset of the constraints active at the start, so
    starting from the optimum terminates in one iteration.

    Iterates stay feasible; on ``max_iter`` the current iterate is returned
    with status ``'iteration_cap'``.
    """
    n = qp.n
    G, g = qp.hessian, qp.gradient
    A, b, kind, var = qp.rows()
    x = np.zeros(n) if warm_start is None else np.array(warm_start, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ContractViolation(f"warm start has {x.size} entries, expected {n}")
    x = np.clip(x, qp.lb, qp.ub)
    scale = 1.0 + np.abs(b)
    if qp.b_ineq.size and np.any(qp.A_ineq @ x - qp.b_ineq > tol * (1 + np.abs(qp.b_ineq))):
        x = np.clip(_phase_one(qp, x), qp.lb, qp.ub)
    active = np.flatnonzero(np.abs(A @ x - b) <= tol * scale)
    W = _independent(A, active)

    status = STATUS_ITERATION_CAP
    lam_W = np.zeros(0)
    it = 0
    for it in range(1, max_iter + 1):
        grad = G @ x + g
        k = len(W)
        Aw = A[W]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = G
        K[:n, n:] = Aw.T
        K[n:, :n] = Aw
        sol = np.linalg.solve(K, np.concatenate([-grad, np.zeros(k)]))
        p, lam_W = sol[:n], sol[n:]
        if np.linalg.norm(p, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(x, np.inf)):
            if k == 0 or lam_W.min() >= -1e-12 * (1.0 + np.abs(grad).max()):
                status = STATUS_OPTIMAL
                break
            W.pop(int(np.argmin(lam_W)))
            continue
        Ap = A @ p
        slack = b - A @ x
        alpha, block = 1.0, -1
        inW = np.zeros(len(b), dtype=bool)
        inW[W] = True
        for i in np.flatnonzero((Ap > 0) & ~inW):
            step = max(slack[i], 0.0) / Ap[i]
            if step < alpha:
                alpha, block = step, i
        x = x + alpha * p
        if block >= 0:
            W.append(int(block))
        for i in W:
            if kind[i] == 0:
                x[var[i]] = qp.lb[var[i]]
            elif kind[i] == 1:
                x[var[i]] = qp.ub[var[i]]
    else:
        log.warning("active-set QP hit max_iter=%d", max_iter)

    x = np.clip(x, qp.lb, qp.ub)
    lam_all = np.zeros(len(b))
    if status == STATUS_OPTIMAL and W:
        lam_all[W] = np.maximum(lam_W, 0.0)
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[var[kind == 0]] = lam_all[kind == 0]
    upper[var[kind == 1]] = lam_all[kind == 1]
    return QpSolution(x, status, it, qp.objective(x), lower, upper, lam_all[kind == 2])


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_violation: float
    dual_violation: float
    complementarity: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.stationarity, self.primal_violation, self.dual_violation,
                   self.complementarity) < self.tol


def check_kkt(qp: QpProblem, U, tol: float = 1e-6, active_tol: float = 1e-7) -> KktReport:
    """Certify ``U`` without trusting the solver's multipliers.

    Multipliers of nearly active constraints are recovered by nonnegative
    least squares on the stationarity equation. Stationarity is measured
    relative to ``1 + |HU| + |g|`` (infinity norms).
    """
    U = np.asarray(U, dtype=float)
    A, b, _, _ = qp.rows()
    grad = qp.hessian @ U + qp.gradient
    slack = b - A @ U
    primal = float(max(0.0, -slack.min())) if slack.size else 0.0
    act = np.flatnonzero(slack <= active_tol * (1.0 + np.abs(b)))
    lam = np.zeros(len(b))
    if act.size:
        lam[act], _ = nnls(A[act].T, -grad)
    resid = grad + A.T @ lam
    denom = 1.0 + np.abs(qp.hessian @ U).max() + np.abs(qp.gradient).max()
    stat = float(np.abs(resid).max() / denom)
    comp = float(np.max(lam * np.abs(slack))) if lam.size else 0.0
    return KktReport(stat, primal, float(max(0.0, -lam.min(initial=0.0))), comp, tol)
