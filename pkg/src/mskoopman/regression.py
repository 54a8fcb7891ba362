"""Dense least squares and elastic-net solvers.

Both solvers minimise, independently for every target column ``y``::

    ||D w - y||^2 + beta ||w||^2 + tau ||w[mask]||_1

``solve_ls`` handles ``tau = 0`` through an SVD of the design.
``solve_elastic_net`` runs cyclic coordinate descent on the Gram matrix
``D'D``; masked coordinates are soft-thresholded, unmasked ones get the
closed-form update.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numba
import numpy as np

from .errors import ContractViolation

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class LsProblem:
    """Penalised multi-target least-squares problem.

    Parameters
    ----------
    design : ndarray, shape (M, P)
    targets : ndarray, shape (M, T) or (M,)
    l2_weight : float
        Ridge weight ``beta``.
    l1_weight : float
        Lasso weight ``tau``.
    l1_mask : ndarray of bool, shape (P,), optional
        Coefficients receiving the l1 penalty. Defaults to all.
    """

    design: np.ndarray
    targets: np.ndarray
    l2_weight: float = 0.0
    l1_weight: float = 0.0
    l1_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        D = np.asarray(self.design, dtype=float)
        Y = np.asarray(self.targets, dtype=float)
        if D.ndim != 2:
            raise ContractViolation("design must be a matrix")
        if Y.ndim not in (1, 2) or Y.shape[0] != D.shape[0]:
            raise ContractViolation(f"targets {Y.shape} incompatible with design {D.shape}")
        if not (np.isfinite(D).all() and np.isfinite(Y).all()):
            raise ContractViolation("design and targets must be finite")
        if not (self.l2_weight >= 0 and self.l1_weight >= 0):
            raise ContractViolation("regularisation weights must be nonnegative")
        mask = (np.ones(D.shape[1], dtype=bool) if self.l1_mask is None
                else np.asarray(self.l1_mask, dtype=bool))
        if mask.shape != (D.shape[1],):
            raise ContractViolation("l1_mask length must equal the number of columns")
        object.__setattr__(self, "design", D)
        object.__setattr__(self, "targets", Y)
        object.__setattr__(self, "l1_mask", mask)

    @property
    def targets_2d(self) -> np.ndarray:
        return self.targets.reshape(self.targets.shape[0], -1)


@dataclass(frozen=True)
class LsSolution:
    """Result of a solve.

    ``coefficients`` has the shape of the targets with rows replaced by the
    ``P`` design columns. ``iterations`` is the largest sweep count over
    target columns (0 for direct solves). ``history`` holds the per-sweep
    objective of each target column when recorded.
    """

    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: Optional[Tuple[np.ndarray, ...]] = None


def objective_value(design, targets, w, beta=0.0, tau=0.0, mask=None) -> float:
    """Penalised objective summed over target columns."""
    D = np.asarray(design, dtype=float)
    W = np.asarray(w, dtype=float).reshape(D.shape[1], -1)
    Y = np.asarray(targets, dtype=float).reshape(D.shape[0], -1)
    if mask is None:
        mask = np.ones(D.shape[1], dtype=bool)
    resid = D @ W - Y
    return float(np.sum(resid ** 2) + beta * np.sum(W ** 2)
                 + tau * np.sum(np.abs(W[np.asarray(mask, dtype=bool)])))


def svd_factor(design: np.ndarray):
    """Thin SVD with the rank cutoff ``sigma_max * max(M, P) * eps``."""
    U, s, Vt = np.linalg.svd(design, full_matrices=False)
    cutoff = (s[0] if s.size else 0.0) * max(design.shape) * np.finfo(float).eps
    return U, s, Vt, cutoff


def _ls_column(U, Vt, filt, y):
    return Vt.T @ (filt * (U.T @ y))


def solve_ls(problem: LsProblem, factor=None) -> LsSolution:
    """Ridge / minimum-norm least squares via SVD.

    With ``beta = 0`` singular values below the rank cutoff are discarded
    (pseudoinverse); with ``beta > 0`` the exact ridge filter
    ``s / (s^2 + beta)`` is applied. Each target column is solved with the
    same matrix-vector products, so solving one column alone gives bitwise
    the same result as solving it inside a batch.

    Parameters
    ----------
    problem : LsProblem
        Must have ``l1_weight == 0``.
    factor : tuple, optional
        Precomputed :func:`svd_factor` output for ``problem.design``.
    """
    if problem.l1_weight != 0:
        raise ContractViolation("solve_ls requires l1_weight = 0")
    U, s, Vt, cutoff = factor if factor is not None else svd_factor(problem.design)
    beta = problem.l2_weight
    if beta > 0:
        filt = s / (s * s + beta)
    else:
        filt = np.zeros_like(s)
        keep = s > cutoff
        filt[keep] = 1.0 / s[keep]
    Y = problem.targets_2d
    W = np.empty((problem.design.shape[1], Y.shape[1]))
    for t in range(Y.shape[1]):
        W[:, t] = _ls_column(U, Vt, filt, Y[:, t])
    obj = objective_value(problem.design, Y, W, beta)
    return LsSolution(W.reshape((-1,) + problem.targets.shape[1:]), obj, 0, True)


@numba.njit(cache=True, nogil=True)
def _cd_kernel(gram, corr, yy, beta, tau, mask, w, tol, max_sweeps, history):
    """Cyclic coordinate descent on ``w'Gw - 2c'w + yy + beta|w|^2 + tau|w_m|_1``.

    ``w`` is updated in place. ``history[s]`` receives the objective after
    sweep ``s``. Returns ``(sweeps, converged)``.
    """
    P = corr.shape[0]
    q = gram @ w
    half = 0.5 * tau
    sweeps = 0
    converged = False
    for s in range(max_sweeps):
        dmax = 0.0
        for j in range(P):
            a = gram[j, j] + beta
            if a <= 0.0:
                continue
            r = corr[j] - q[j] + gram[j, j] * w[j]
            if mask[j]:
                if r > half:
                    nw = (r - half) / a
                elif r < -half:
                    nw = (r + half) / a
                else:
                    nw = 0.0
            else:
                nw = r / a
            d = nw - w[j]
            if d != 0.0:
                for l in range(P):
                    q[l] += gram[l, j] * d
                w[j] = nw
                if abs(d) > dmax:
                    dmax = abs(d)
        obj = yy
        for j in range(P):
            obj += w[j] * q[j] - 2.0 * corr[j] * w[j] + beta * w[j] * w[j]
            if mask[j]:
                obj += tau * abs(w[j])
        history[s] = obj
        sweeps = s + 1
        if dmax < tol:
            converged = True
            break
    return sweeps, converged


def solve_gram_elastic_net(gram, corr, yy, beta, tau, mask, tol=DEFAULT_TOL,
                           max_sweeps=DEFAULT_MAX_SWEEPS, w0=None):
    """Single-target elastic net from sufficient statistics.

    Parameters
    ----------
    gram : ndarray, shape (P, P)
        ``D'D``.
    corr : ndarray, shape (P,)
        ``D'y``.
    yy : float
        ``y'y``; only shifts the reported objective.

    Returns
    -------
    w, sweeps, converged, history
    """
    gram = np.ascontiguousarray(gram, dtype=float)
    corr = np.ascontiguousarray(corr, dtype=float)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    w = np.zeros(corr.shape[0]) if w0 is None else np.array(w0, dtype=float)
    history = np.empty(max_sweeps)
    sweeps, converged = _cd_kernel(gram, corr, float(yy), float(beta), float(tau), mask,
                                   w, float(tol), int(max_sweeps), history)
    return w, sweeps, converged, history[:sweeps].copy()


def solve_elastic_net(problem: LsProblem, tol: float = DEFAULT_TOL,
                      max_sweeps: int = DEFAULT_MAX_SWEEPS, threads: int = 1) -> LsSolution:
    """Elastic net by cyclic coordinate descent.

    Terminates per column when the largest coefficient change in a sweep
    drops below ``tol``. Columns that hit ``max_sweeps`` are returned as is
    with ``converged=False``.
    """
    D = problem.design
    Y = problem.targets_2d
    gram = D.T @ D
    corrs = D.T @ Y
    yys = np.einsum("ij,ij->j", Y, Y)

    def one(t):
        return solve_gram_elastic_net(gram, corrs[:, t], yys[t], problem.l2_weight,
                                      problem.l1_weight, problem.l1_mask, tol, max_sweeps)

    cols = range(Y.shape[1])
    if threads > 1 and Y.shape[1] > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, cols))
    else:
        results = [one(t) for t in cols]
    W = np.column_stack([r[0] for r in results])
    converged = all(r[2] for r in results)
    if not converged:
        log.warning("elastic net hit max_sweeps=%d before tol=%g", max_sweeps, tol)
    obj = objective_value(D, Y, W, problem.l2_weight, problem.l1_weight, problem.l1_mask)
    return LsSolution(W.reshape((-1,) + problem.targets.shape[1:]), obj,
                      max(r[1] for r in results), converged,
                      tuple(r[3] for r in results))
