"""Multi-step EDMD: learn the condensed predictor ``(E_k, F_k)`` directly.

For every horizon step ``k`` and state coordinate ``i`` the row pair
``(E_{k,i}, F_{k,i})`` solves an independent penalised least-squares
problem::

    min ||G e + H_k f - h_k^i||^2 + beta ||(e, f)||^2 + tau ||e||_1

with ``G`` the lifted initial states, ``H_k`` the first ``k`` stacked
inputs and ``h_k^i`` coordinate ``i`` of ``x_{j,k}``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .dictionary import Dictionary
from .dynamics import TrajectoryDataset
from .errors import ContractViolation
from .regression import (DEFAULT_MAX_SWEEPS, DEFAULT_TOL, LsProblem, solve_gram_elastic_net,
                         solve_ls, svd_factor)

log = logging.getLogger(__name__)

PROVENANCES = ("multistep", "onestep")
DEFAULT_BETA = 1e-8


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CondensedModel:
    """Horizon-stacked predictor ``x_k = E_k psi(x_0) + F_k U[:k n_u]``.

    Attributes
    ----------
    E_blocks : tuple of ndarray
        ``E_k`` of shape ``(n_x, N)`` for ``k = 1..H``.
    F_blocks : tuple of ndarray
        ``F_k`` of shape ``(n_x, k n_u)``; column block ``m`` multiplies
        ``u_m``.
    dictionary : Dictionary
    provenance : {'multistep', 'onestep'}
    converged, iterations, objective : ndarray, shape (H, n_x), optional
        Per-subproblem training diagnostics.
    """

    E_blocks: Tuple[np.ndarray, ...]
    F_blocks: Tuple[np.ndarray, ...]
    dictionary: Dictionary
    provenance: str = "multistep"
    converged: Optional[np.ndarray] = None
    iterations: Optional[np.ndarray] = None
    objective: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ContractViolation(f"provenance must be one of {PROVENANCES}")
        if len(self.E_blocks) == 0 or len(self.E_blocks) != len(self.F_blocks):
            raise ContractViolation("need one E and one F block per horizon step")
        E = tuple(_readonly(e) for e in self.E_blocks)
        F = tuple(_readonly(f) for f in self.F_blocks)
        n_x, N = E[0].shape
        if N != self.dictionary.N:
            raise ContractViolation(f"E has {N} columns but dictionary has N={self.dictionary.N}")
        n_u = F[0].shape[1]
        for k, (e, f) in enumerate(zip(E, F), start=1):
            if e.shape != (n_x, N) or f.shape != (n_x, k * n_u):
                raise ContractViolation(f"block {k} has shapes {e.shape}, {f.shape}")
        object.__setattr__(self, "E_blocks", E)
        object.__setattr__(self, "F_blocks", F)
        for name in ("converged", "iterations", "objective"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val)
                val.flags.writeable = False
                object.__setattr__(self, name, val)

    @property
    def H(self) -> int:
        return len(self.E_blocks)

    @property
    def n_x(self) -> int:
        return self.E_blocks[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.F_blocks[0].shape[1]

    @property
    def N(self) -> int:
        return self.E_blocks[0].shape[1]

    @property
    def E(self) -> np.ndarray:
        """Stacked ``(n_x H, N)`` matrix."""
        return np.vstack(self.E_blocks)

    @property
    def F(self) -> np.ndarray:
        """Stacked ``(n_x H, n_u H)`` matrix, zero above the block diagonal."""
        F = np.zeros((self.n_x * self.H, self.n_u * self.H))
        for k, f in enumerate(self.F_blocks):
            F[k * self.n_x:(k + 1) * self.n_x, :f.shape[1]] = f
        return F

    @property
    def all_converged(self) -> bool:
        return self.converged is None or bool(np.all(self.converged))

    def truncated(self, H: int) -> "CondensedModel":
        """Keep the first ``H`` horizon steps."""
        if not 1 <= H <= self.H:
            raise ContractViolation(f"cannot truncate horizon {self.H} to {H}")
        cut = (lambda a: None if a is None else a[:H])
        return CondensedModel(self.E_blocks[:H], self.F_blocks[:H], self.dictionary,
                              self.provenance, cut(self.converged), cut(self.iterations),
                              cut(self.objective), dict(self.meta))

    def predict_lifted(self, psi0, U) -> np.ndarray:
        """Predictions from lifted initial states.

        Parameters
        ----------
        psi0 : ndarray, shape (N,) or (M, N)
        U : ndarray, shape (H n_u,), (H, n_u) or batched (M, H, n_u)

        Returns
        -------
        ndarray, shape (H, n_x) or (M, H, n_x)
        """
        psi0 = np.asarray(psi0, dtype=float)
        single = psi0.ndim == 1
        psi0 = psi0.reshape(-1, self.N)
        U = np.asarray(U, dtype=float).reshape(psi0.shape[0], -1)
        if U.shape[1] != self.n_u * self.H:
            raise ContractViolation(
                f"expected {self.n_u * self.H} stacked inputs, got {U.shape[1]}")
        out = np.empty((psi0.shape[0], self.H, self.n_x))
        for k in range(self.H):
            f = self.F_blocks[k]
            out[:, k] = psi0 @ self.E_blocks[k].T + U[:, :f.shape[1]] @ f.T
        return out[0] if single else out

    def predict(self, x0, U) -> np.ndarray:
        """``(x_1, ..., x_H)`` for one or many initial states."""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape[-1] != self.n_x:
            raise ContractViolation(f"expected states of size {self.n_x}")
        return self.predict_lifted(self.dictionary.lift(x0), U)


def predict_multistep(model: CondensedModel, x0, U) -> np.ndarray:
    """Stacked prediction ``(x_1, ..., x_H)`` of shape ``(H, n_x)``."""
    return model.predict(x0, U)


@dataclass(frozen=True, eq=False)
class RegressorCache:
    """Quantities shared by all subproblems.

    ``G[j] = psi(x_{j,0})``; ``HH`` stacks ``(u_{j,0}, ..., u_{j,H-1})`` so that
    ``H_k`` is the prefix ``HH[:, :k n_u]``; ``targets[j, k-1, i]`` is
    ``x_{j,k}^i``.
    """

    G: np.ndarray
    HH: np.ndarray
    targets: np.ndarray
    n_u: int

    @property
    def H(self) -> int:
        return self.targets.shape[1]

    @property
    def n_x(self) -> int:
        return self.targets.shape[2]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    def H_k(self, k: int) -> np.ndarray:
        return self.HH[:, :k * self.n_u]

    def h(self, k: int, i: int) -> np.ndarray:
        return self.targets[:, k - 1, i]

    def design(self, k: int) -> np.ndarray:
        return np.hstack([self.G, self.H_k(k)])


def build_cache(dataset: TrajectoryDataset, dictionary: Dictionary,
                H: Optional[int] = None) -> RegressorCache:
    H = dataset.horizon if H is None else H
    if not 1 <= H <= dataset.horizon:
        raise ContractViolation(f"horizon {H} exceeds dataset horizon {dataset.horizon}")
    if dictionary.n_x != dataset.n_x:
        raise ContractViolation("dictionary and dataset state dimensions differ")
    G = dictionary.lift(dataset.states[:, 0])
    HH = np.ascontiguousarray(dataset.controls[:, :H].reshape(dataset.num_trajectories, -1))
    targets = np.ascontiguousarray(dataset.states[:, 1:H + 1])
    for a in (G, HH, targets):
        a.flags.writeable = False
    return RegressorCache(G, HH, targets, dataset.n_u)


@dataclass(frozen=True)
class SubproblemResult:
    k: int
    i: int
    e: np.ndarray
    f: np.ndarray
    converged: bool
    iterations: int
    objective: float


class _GramCache:
    """Gram blocks ``G'G``, ``G'HH``, ``HH'HH`` and target correlations."""

    def __init__(self, cache: RegressorCache):
        G, HH = cache.G, cache.HH
        T = cache.targets.reshape(G.shape[0], -1)
        self.GG = G.T @ G
        self.GH = G.T @ HH
        self.HHH = HH.T @ HH
        self.GT = G.T @ T
        self.HT = HH.T @ T
        self.TT = np.einsum("ij,ij->j", T, T)
        self.n_x = cache.n_x
        self.n_u = cache.n_u

    def system(self, k: int, i: int):
        c = self.n_u * k
        gh = self.GH[:, :c]
        gram = np.block([[self.GG, gh], [gh.T, self.HHH[:c, :c]]])
        col = (k - 1) * self.n_x + i
        corr = np.concatenate([self.GT[:, col], self.HT[:c, col]])
        return gram, corr, self.TT[col]


def _l1_mask(dictionary: Dictionary, k: int, n_u: int) -> np.ndarray:
    # Only observable coefficients are penalised; raw-state columns are
    # exempt because pruning never removes them.
    mask = np.zeros(dictionary.N + k * n_u, dtype=bool)
    mask[dictionary.n_raw:dictionary.N] = True
    return mask


def solve_subproblem(cache: RegressorCache, dictionary: Dictionary, k: int, i: int,
                     beta: float = DEFAULT_BETA, tau: float = 0.0, tol: float = DEFAULT_TOL,
                     max_sweeps: int = DEFAULT_MAX_SWEEPS, _factor=None,
                     _gram: Optional[_GramCache] = None) -> SubproblemResult:
    """Fit the row pair ``(E_{k,i}, F_{k,i})`` in isolation."""
    if not (1 <= k <= cache.H and 0 <= i < cache.n_x):
        raise ContractViolation(f"subproblem ({k}, {i}) out of range")
    N = cache.N
    if tau == 0:
        factor = _factor if _factor is not None else svd_factor(cache.design(k))
        sol = solve_ls(LsProblem(cache.design(k), cache.h(k, i), beta), factor)
        w, conv, iters, obj = sol.coefficients, True, 0, sol.objective
    else:
        gc = _gram if _gram is not None else _GramCache(cache)
        gram, corr, yy = gc.system(k, i)
        w, iters, conv, hist = solve_gram_elastic_net(
            gram, corr, yy, beta, tau, _l1_mask(dictionary, k, cache.n_u), tol, max_sweeps)
        obj = float(hist[-1]) if len(hist) else float(yy)
    return SubproblemResult(k, i, w[:N].copy(), w[N:].copy(), bool(conv), int(iters), obj)


def fit_multistep(dataset: TrajectoryDataset, dictionary: Dictionary,
                  H: Optional[int] = None, beta: float = DEFAULT_BETA, tau: float = 0.0,
                  threads: int = 1, tol: float = DEFAULT_TOL,
                  max_sweeps: int = DEFAULT_MAX_SWEEPS,
                  cache: Optional[RegressorCache] = None) -> CondensedModel:
    """Fit all ``H n_x`` subproblems and assemble the condensed model.

    ``tau = 0`` uses the SVD ridge solver (one factorisation per ``k``);
    ``tau > 0`` uses coordinate descent on Gram blocks computed once.
    Subproblems run on ``threads`` workers and are assembled by index, so
    the result does not depend on the thread count.
    """
    if beta < 0 or tau < 0:
        raise ContractViolation("beta and tau must be nonnegative")
    cache = build_cache(dataset, dictionary, H) if cache is None else cache
    H, n_x = cache.H, cache.n_x
    gram = _GramCache(cache) if tau > 0 else None

    def per_k(k):
        factor = svd_factor(cache.design(k)) if tau == 0 else None
        return [solve_subproblem(cache, dictionary, k, i, beta, tau, tol, max_sweeps,
                                 _factor=factor, _gram=gram) for i in range(n_x)]

    ks = range(1, H + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(per_k, ks))
    else:
        results = [per_k(k) for k in ks]
    model = _assemble(results, dictionary, H, n_x)
    if not model.all_converged:
        log.warning("%d of %d subproblems did not converge",
                    int(np.sum(~model.converged)), H * n_x)
    return model


def _assemble(results: Sequence[Sequence[SubproblemResult]], dictionary, H, n_x):
    E, F = [], []
    conv = np.zeros((H, n_x), dtype=bool)
    iters = np.zeros((H, n_x), dtype=int)
    obj = np.zeros((H, n_x))
    for row in results:
        for r in row:
            conv[r.k - 1, r.i] = r.converged
            iters[r.k - 1, r.i] = r.iterations
            obj[r.k - 1, r.i] = r.objective
        E.append(np.vstack([r.e for r in sorted(row, key=lambda r: r.i)]))
        F.append(np.vstack([r.f for r in sorted(row, key=lambda r: r.i)]))
    return CondensedModel(tuple(E), tuple(F), dictionary, "multistep", conv, iters, obj)


def prune_mask(model: CondensedModel, epsilon: float) -> np.ndarray:
    """Columns of the stacked ``E`` to keep: ``max |E[:, l]| >= epsilon``.

    Raw-state columns are always kept. If no observable column survives,
    the constant observable (or, if already removed, the largest remaining
    column) is kept.
    """
    if not epsilon >= 0:
        raise ContractViolation("epsilon must be nonnegative")
    d = model.dictionary
    colmax = np.max(np.abs(model.E), axis=0)
    keep = colmax >= epsilon
    keep[:d.n_raw] = True
    if not keep[d.n_raw:].any() and d.N > d.n_raw:
        kept = d.kept_indices
        const = tuple([0] * d.n_x)
        pos = kept.index(const) if const in kept else int(np.argmax(colmax[d.n_raw:]))
        keep[d.n_raw + pos] = True
        log.info("all observable columns fell below epsilon=%g; keeping %s", epsilon, kept[pos])
    return keep


def prune(model: CondensedModel, epsilon: float, retrain: bool = False,
          dataset: Optional[TrajectoryDataset] = None, beta: float = DEFAULT_BETA,
          tau: float = 0.0, threads: int = 1, tol: float = DEFAULT_TOL,
          max_sweeps: int = DEFAULT_MAX_SWEEPS) -> Tuple[CondensedModel, Dictionary]:
    """Drop dictionary columns whose stacked ``E`` coefficients are all small.

    ``F`` is never modified. With ``retrain=True`` every subproblem is
    re-solved on the reduced dictionary using ``dataset``, ``beta`` and
    ``tau``.

    Returns
    -------
    model, dictionary
        The pruned model and its dictionary (``dictionary.kept`` updated).
    """
    if model.provenance != "multistep":
        raise ContractViolation("pruning applies to multistep models only")
    keep = prune_mask(model, epsilon)
    new_dict = model.dictionary.with_kept(keep)
    if retrain:
        if dataset is None:
            raise ContractViolation("retrain=True requires the training dataset")
        pruned = fit_multistep(dataset, new_dict, model.H, beta, tau, threads, tol, max_sweeps)
    else:
        pruned = CondensedModel(tuple(e[:, keep] for e in model.E_blocks), model.F_blocks,
                                new_dict, "multistep", model.converged, model.iterations,
                                model.objective, dict(model.meta))
    log.info("pruned lifted dimension %d -> %d (%d observables)",
             model.N, new_dict.N, new_dict.num_legendre)
    return pruned, new_dict
