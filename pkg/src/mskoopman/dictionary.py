"""Tensor-product Legendre observables with prepended coordinate functions.

The lifted vector is ``psi(x) = [x^1, ..., x^{n_x}, Phi_a1(x), Phi_a2(x), ...]``
where ``Phi_a(x) = prod_i phi_{a_i}(x^i)`` and ``phi_l = sqrt(2l + 1) P_l`` is
the Legendre polynomial normalised under ``dx/2`` on ``[-1, 1]``.
The raw coordinates are optional; when present the output matrix is
``C = [I, 0]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, DimensionCapError, UnsupportedConfigurationError

MultiIndex = Tuple[int, ...]

TRUNCATIONS = ("total", "max")
DEFAULT_DIMENSION_CAP = 10_000


def total_degree(alpha: MultiIndex) -> int:
    return sum(alpha)


def max_degree(alpha: MultiIndex) -> int:
    return max(alpha) if alpha else 0


def legendre_table(max_deg: int, x) -> np.ndarray:
    """Normalised Legendre values ``phi_0..phi_max_deg`` at ``x``.

    Returns an array of shape ``x.shape + (max_deg + 1,)``. Uses the
    three-term recurrence ``(l+1) P_{l+1} = (2l+1) x P_l - l P_{l-1}``.
    """
    if max_deg < 0:
        raise ContractViolation("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_deg + 1,))
    out[..., 0] = 1.0
    if max_deg >= 1:
        out[..., 1] = x
    for l in range(1, max_deg):
        out[..., l + 1] = ((2 * l + 1) * x * out[..., l] - l * out[..., l - 1]) / (l + 1)
    out *= np.sqrt(2.0 * np.arange(max_deg + 1) + 1.0)
    return out


def legendre_eval_1d(degree: int, x):
    """``sqrt(2 degree + 1) P_degree(x)``; defined (unclipped) for all real ``x``."""
    vals = legendre_table(degree, x)[..., degree]
    return float(vals) if np.ndim(vals) == 0 else vals


def count_indices(n_x: int, truncation: str, degree: int) -> int:
    if truncation == "total":
        return math.comb(degree + n_x, n_x)
    if truncation == "max":
        return (degree + 1) ** n_x
    raise ContractViolation(f"truncation must be one of {TRUNCATIONS}")


def enumerate_indices(n_x: int, truncation: str, degree: int) -> Tuple[MultiIndex, ...]:
    """All multi-indices for the truncation rule, graded-lexicographic.

    Ordered by total degree, then by exponent tuple descending, e.g.
    ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    if truncation == "total":
        keep = lambda a: sum(a) <= degree  # noqa: E731
    elif truncation == "max":
        keep = lambda a: True  # noqa: E731
    else:
        raise ContractViolation(f"truncation must be one of {TRUNCATIONS}")
    alphas = [a for a in itertools.product(range(degree + 1), repeat=n_x) if keep(a)]
    alphas.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    return tuple(alphas)


@dataclass(frozen=True)
class Dictionary:
    """Ordered observable set defining ``psi`` and ``C``.

    Attributes
    ----------
    n_x : int
        State dimension.
    truncation : {'total', 'max'}
        ``'total'``: total degree <= ``degree``; ``'max'``: every exponent
        <= ``degree``.
    degree : int
        Truncation degree (``d`` or ``p``).
    indices : tuple of MultiIndex
        The full (unpruned) Legendre block, sorted and duplicate-free.
    include_raw_state : bool
        Prepend the coordinate functions ``g_i(x) = x^i``.
    kept : tuple of bool, optional
        Mask over ``raw + indices`` after pruning; ``None`` keeps all.
    scale_lo, scale_hi : tuple of float, optional
        When set, Legendre factors are evaluated at the affine image of
        ``x`` mapping ``[scale_lo, scale_hi]`` onto ``[-1, 1]``. Raw
        coordinates are never scaled.
    """

    n_x: int
    truncation: str
    degree: int
    indices: Tuple[MultiIndex, ...]
    include_raw_state: bool = True
    kept: Optional[Tuple[bool, ...]] = None
    scale_lo: Optional[Tuple[float, ...]] = None
    scale_hi: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kept is not None:
            if len(self.kept) != self.n_raw + len(self.indices):
                raise ContractViolation("kept mask length does not match dictionary")
            if self.include_raw_state and not all(self.kept[:self.n_x]):
                raise ContractViolation("raw-state columns cannot be pruned")
        if (self.scale_lo is None) != (self.scale_hi is None):
            raise ContractViolation("scale_lo and scale_hi must be given together")
        if self.scale_lo is not None:
            if len(self.scale_lo) != self.n_x or len(self.scale_hi) != self.n_x:
                raise ContractViolation("scaling box must have one interval per coordinate")
            if not all(lo < hi for lo, hi in zip(self.scale_lo, self.scale_hi)):
                raise ContractViolation("scaling box must satisfy lo < hi")

    @property
    def n_raw(self) -> int:
        return self.n_x if self.include_raw_state else 0

    @property
    def full_mask(self) -> np.ndarray:
        if self.kept is None:
            return np.ones(self.n_raw + len(self.indices), dtype=bool)
        return np.array(self.kept, dtype=bool)

    @property
    def N(self) -> int:
        """Lifted dimension (after pruning)."""
        return int(self.full_mask.sum())

    @property
    def kept_indices(self) -> Tuple[MultiIndex, ...]:
        mask = self.full_mask[self.n_raw:]
        return tuple(a for a, k in zip(self.indices, mask) if k)

    @property
    def num_legendre(self) -> int:
        return len(self.kept_indices)

    def column_labels(self) -> list:
        """Human-readable label of every kept column, in lift order."""
        raw = [f"x{i + 1}" for i in range(self.n_raw)]
        leg = ["P" + "_".join(str(v) for v in a) for a in self.indices]
        return [lab for lab, k in zip(raw + leg, self.full_mask) if k]

    def scaled(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.scale_lo is None:
            return x
        lo = np.asarray(self.scale_lo)
        hi = np.asarray(self.scale_hi)
        return (2.0 * x - (lo + hi)) / (hi - lo)

    def lift(self, x) -> np.ndarray:
        """Evaluate ``psi`` at one state ``(n_x,)`` or a batch ``(M, n_x)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_x:
            raise ContractViolation(f"expected states of size {self.n_x}, got {x.shape}")
        alphas = np.array(self.kept_indices, dtype=int).reshape(-1, self.n_x)
        s = self.scaled(x)
        leg = np.ones(x.shape[:-1] + (len(alphas),))
        if len(alphas):
            top = int(alphas.max()) if alphas.size else 0
            for i in range(self.n_x):
                table = legendre_table(top, s[..., i])
                leg = leg * table[..., alphas[:, i]]
        parts = []
        if self.include_raw_state:
            parts.append(x)
        parts.append(leg)
        return np.concatenate(parts, axis=-1)

    def output_matrix(self) -> np.ndarray:
        """``C = [I, 0]`` selecting the raw coordinates from ``psi``."""
        if not self.include_raw_state:
            raise UnsupportedConfigurationError(
                "output matrix requires include_raw_state=True")
        C = np.zeros((self.n_x, self.N))
        C[:, :self.n_x] = np.eye(self.n_x)
        return C

    def with_kept(self, column_mask: Sequence[bool]) -> "Dictionary":
        """Restrict to a subset of the *currently kept* columns."""
        column_mask = np.asarray(column_mask, dtype=bool)
        if column_mask.shape != (self.N,):
            raise ContractViolation(f"mask must have length N={self.N}")
        full = self.full_mask
        positions = np.flatnonzero(full)
        full = np.zeros_like(full)
        full[positions[column_mask]] = True
        return replace(self, kept=tuple(bool(v) for v in full))

    def to_dict(self) -> dict:
        return {
            "n_x": self.n_x,
            "truncation": self.truncation,
            "degree": self.degree,
            "indices": [list(a) for a in self.indices],
            "include_raw_state": self.include_raw_state,
            "kept": None if self.kept is None else [bool(v) for v in self.kept],
            "scale_lo": None if self.scale_lo is None else list(self.scale_lo),
            "scale_hi": None if self.scale_hi is None else list(self.scale_hi),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        return cls(
            n_x=int(d["n_x"]),
            truncation=d["truncation"],
            degree=int(d["degree"]),
            indices=tuple(tuple(int(v) for v in a) for a in d["indices"]),
            include_raw_state=bool(d["include_raw_state"]),
            kept=None if d.get("kept") is None else tuple(bool(v) for v in d["kept"]),
            scale_lo=None if d.get("scale_lo") is None else tuple(float(v) for v in d["scale_lo"]),
            scale_hi=None if d.get("scale_hi") is None else tuple(float(v) for v in d["scale_hi"]),
        )


def build_dictionary(n_x: int, truncation: str = "total", degree: int = 2,
                     include_raw_state: bool = True, scale_box=None,
                     dimension_cap: int = DEFAULT_DIMENSION_CAP) -> Dictionary:
    """Enumerate the Legendre block for a truncation rule.

    Parameters
    ----------
    n_x : int
        State dimension.
    truncation : {'total', 'max'}
        Total-degree (``C(d + n_x, n_x)`` terms) or per-coordinate maximum
        degree (``(p + 1)^n_x`` terms).
    degree : int
        ``d`` or ``p``.
    include_raw_state : bool
        Prepend the coordinates so that ``C = [I, 0]``.
    scale_box : sequence of (lo, hi), optional
        Affine map of this box onto ``[-1, 1]^n_x`` before evaluating the
        Legendre factors. Off by default.
    dimension_cap : int
        Raise :class:`DimensionCapError` above this lifted dimension.
    """
    if n_x < 1:
        raise ContractViolation("n_x must be positive")
    if degree < 0:
        raise ContractViolation("degree must be nonnegative")
    count = count_indices(n_x, truncation, degree)
    total = count + (n_x if include_raw_state else 0)
    if total > dimension_cap:
        raise DimensionCapError(f"lifted dimension {total} exceeds cap {dimension_cap}")
    lo = hi = None
    if scale_box is not None:
        lo = tuple(float(b[0]) for b in scale_box)
        hi = tuple(float(b[1]) for b in scale_box)
    return Dictionary(n_x, truncation, degree, enumerate_indices(n_x, truncation, degree),
                      include_raw_state, None, lo, hi)
