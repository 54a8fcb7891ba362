"""One-step EDMD: lifted LTI predictor ``psi+ = A psi + B u`` and its condensation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary
from .dynamics import TrajectoryDataset
from .edmd_multistep import DEFAULT_BETA, CondensedModel
from .errors import ContractViolation
from .regression import LsProblem, solve_ls

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OneStepModel:
    """Lifted linear predictor.

    Attributes
    ----------
    A : ndarray, shape (N, N)
    B : ndarray, shape (N, n_u)
    C : ndarray, shape (n_x, N)
    dictionary : Dictionary
    residual : float
        Frobenius norm of the training residual.
    num_samples : int
        Number of one-step samples ``M``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: Dictionary
    residual: float = float("nan")
    num_samples: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.dictionary.N
        A, B, C = (np.array(m, dtype=float) for m in (self.A, self.B, self.C))
        if A.shape != (N, N) or B.ndim != 2 or B.shape[0] != N or C.shape != (self.dictionary.n_x, N):
            raise ContractViolation(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} N={N}")
        for name, m in zip("ABC", (A, B, C)):
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def step(self, psi, u) -> np.ndarray:
        return self.A @ psi + self.B @ np.atleast_1d(u)


def fit_onestep(dataset: TrajectoryDataset, dictionary: Dictionary,
                beta: float = DEFAULT_BETA, pairs: str = "all") -> OneStepModel:
    """Least-squares fit of ``(A, B)`` on one-step samples.

    Parameters
    ----------
    pairs : {'all', 'first'}
        ``'all'`` uses every consecutive pair of every trajectory;
        ``'first'`` only the first transition of each.
    """
    x, u, xn = dataset.one_step_pairs(pairs)
    if x.shape[0] == 0:
        raise ContractViolation("dataset has no transitions")
    psi, psin = dictionary.lift(x), dictionary.lift(xn)
    N = psi.shape[1]
    sol = solve_ls(LsProblem(np.hstack([psi, u]), psin, beta))
    W = sol.coefficients
    A, B = W[:N].T, W[N:].T
    resid = float(np.linalg.norm(psi @ A.T + u @ B.T - psin))
    model = OneStepModel(A, B, dictionary.output_matrix(), dictionary, resid, x.shape[0])
    log.info("one-step fit on %d samples, N=%d, spectral radius %.4f",
             x.shape[0], N, spectral_radius(model.A))
    return model


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus (dense eigendecomposition)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolation("spectral radius needs a square matrix")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def condense(model: OneStepModel, H: int) -> CondensedModel:
    """Stack ``E_k = C A^k`` and ``F_k[:, m] = C A^(k-1-m) B`` for ``k = 1..H``."""
    if H < 1:
        raise ContractViolation("horizon must be at least 1")
    CA = [model.C]
    for _ in range(H):
        CA.append(CA[-1] @ model.A)
    gamma = [c @ model.B for c in CA[:H]]  # gamma[j] = C A^j B
    E = tuple(CA[k] for k in range(1, H + 1))
    F = tuple(np.hstack(gamma[k - 1::-1]) for k in range(1, H + 1))
    return CondensedModel(E, F, model.dictionary, "onestep")
