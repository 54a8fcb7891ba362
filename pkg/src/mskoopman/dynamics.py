"""Benchmark plants, fixed-step RK4 integration and trajectory datasets.

Three plants are available:

* ``VanDerPol``: ``x1' = x2``, ``x2' = mu (1 - x1^2) x2 - omega0^2 x1 + u``
* ``Duffing``: ``x1' = x2``, ``x2' = -delta x2 - alpha x1 - beta x1^3 + u``
* ``LinearTest``: ``x' = A x + B u`` (used for exact-recovery checks)

Inputs are held constant over each sampling interval (zero-order hold).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, IntegrationOverflowError

log = logging.getLogger(__name__)

PLANT_NAMES = ("VanDerPol", "Duffing", "LinearTest")

_DEFAULT_PARAMS = {
    "VanDerPol": {"mu": 5.0, "omega0": 0.8},
    "Duffing": {"delta": 0.2, "alpha": -1.0, "beta": 1.0},
}


@dataclass(frozen=True, eq=False)
class PlantSpec:
    """Continuous-time plant description.

    Use the :meth:`van_der_pol`, :meth:`duffing` and :meth:`linear_test`
    constructors rather than filling ``params`` by hand. ``LinearTest``
    stores its matrices entrywise under keys ``A_i_j`` and ``B_i_j``
    (1-based).
    """

    name: str
    params: Mapping[str, float]
    n_x: int
    n_u: int

    def __post_init__(self):
        if self.name not in PLANT_NAMES:
            raise ContractViolation(f"unknown plant {self.name!r}")
        if self.n_x < 1 or self.n_u < 1:
            raise ContractViolation("state and input dimensions must be positive")
        if self.name != "LinearTest" and (self.n_x, self.n_u) != (2, 1):
            raise ContractViolation(f"{self.name} has n_x=2 and n_u=1")
        params = {k: float(v) for k, v in self.params.items()}
        if not all(math.isfinite(v) for v in params.values()):
            raise ContractViolation("plant parameters must be finite")
        if self.name in _DEFAULT_PARAMS:
            missing = set(_DEFAULT_PARAMS[self.name]) - set(params)
            if missing:
                raise ContractViolation(f"{self.name} is missing {sorted(missing)}")
        object.__setattr__(self, "params", MappingProxyType(params))
        if self.name == "LinearTest":
            a, b = _unpack_linear(params, self.n_x, self.n_u)
            object.__setattr__(self, "_A", a)
            object.__setattr__(self, "_B", b)

    @classmethod
    def van_der_pol(cls, mu: float = 5.0, omega0: float = 0.8) -> "PlantSpec":
        return cls("VanDerPol", {"mu": mu, "omega0": omega0}, 2, 1)

    @classmethod
    def duffing(cls, delta: float = 0.2, alpha: float = -1.0,
                beta: float = 1.0) -> "PlantSpec":
        return cls("Duffing", {"delta": delta, "alpha": alpha, "beta": beta}, 2, 1)

    @classmethod
    def linear_test(cls, A, B) -> "PlantSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ContractViolation("LinearTest needs square A and B with matching rows")
        params = {}
        for (i, j), v in np.ndenumerate(A):
            params[f"A_{i + 1}_{j + 1}"] = v
        for (i, j), v in np.ndenumerate(B):
            params[f"B_{i + 1}_{j + 1}"] = v
        return cls("LinearTest", params, A.shape[0], B.shape[1])

    @classmethod
    def from_params(cls, name: str, params: Mapping[str, float]) -> "PlantSpec":
        """Build a plant from a name and a flat parameter map."""
        if name == "LinearTest":
            rows = max(int(k.split("_")[1]) for k in params if k.startswith("A_"))
            cols = max(int(k.split("_")[2]) for k in params if k.startswith("B_"))
            return cls(name, params, rows, cols)
        merged = dict(_DEFAULT_PARAMS.get(name, {}))
        merged.update(params)
        return cls(name, merged, 2, 1)

    def linear_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.name != "LinearTest":
            raise ContractViolation("only LinearTest plants have system matrices")
        return self._A.copy(), self._B.copy()


def _unpack_linear(params, n_x, n_u):
    A = np.zeros((n_x, n_x))
    B = np.zeros((n_x, n_u))
    for key, v in params.items():
        kind, i, j = key.split("_")
        target = A if kind == "A" else B
        target[int(i) - 1, int(j) - 1] = v
    A.flags.writeable = False
    B.flags.writeable = False
    return A, B


@dataclass(frozen=True)
class SamplingSpec:
    """How trajectories are sampled.

    Attributes
    ----------
    horizon : int
        Steps per trajectory (``H``); each trajectory has ``H + 1`` states.
    step_size : float
        Sampling interval ``Ts`` in seconds.
    num_trajectories : int
        Number of trajectories ``M_m``.
    init_box : tuple of (lo, hi)
        Per-coordinate interval for uniform initial-state sampling.
    input_amp : float
        PRBS amplitude; inputs are ``+input_amp`` or ``-input_amp``.
    seed : int
        Master seed (nonnegative).
    """

    horizon: int
    step_size: float
    num_trajectories: int
    init_box: Tuple[Tuple[float, float], ...]
    input_amp: float
    seed: int = 0

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.init_box)
        object.__setattr__(self, "init_box", box)
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if self.num_trajectories < 1:
            raise ContractViolation("num_trajectories must be >= 1")
        if not self.step_size > 0:
            raise ContractViolation("step_size must be positive")
        if self.input_amp < 0:
            raise ContractViolation("input_amp must be nonnegative")
        if self.seed < 0:
            raise ContractViolation("seed must be nonnegative")
        for lo, hi in box:
            if not lo < hi:
                raise ContractViolation(f"empty sampling interval [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Sampled trajectories.

    ``states[j, k]`` is ``x_{j,k}`` for ``k = 0..H`` and ``controls[j, k]``
    is ``u_{j,k}`` for ``k = 0..H-1``. Arrays are read-only.
    """

    states: np.ndarray
    controls: np.ndarray
    plant: Optional[PlantSpec] = None
    sampling: Optional[SamplingSpec] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        controls = np.array(self.controls, dtype=float)
        if states.ndim != 3 or controls.ndim != 3:
            raise ContractViolation("states must be (M, H+1, n_x) and controls (M, H, n_u)")
        if states.shape[0] != controls.shape[0] or states.shape[1] != controls.shape[1] + 1:
            raise ContractViolation(
                f"inconsistent shapes: states {states.shape}, controls {controls.shape}")
        if controls.shape[1] < 1 or states.shape[0] < 1:
            raise ContractViolation("dataset needs at least one transition")
        if not (np.isfinite(states).all() and np.isfinite(controls).all()):
            raise ContractViolation("dataset entries must be finite")
        states.flags.writeable = False
        controls.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def num_trajectories(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.controls.shape[1]

    @property
    def n_x(self) -> int:
        return self.states.shape[2]

    @property
    def n_u(self) -> int:
        return self.controls.shape[2]

    def one_step_pairs(self, pairs: str = "all"):
        """Return ``(x, u, x_next)`` arrays of one-step samples.

        ``pairs="all"`` uses every consecutive pair in every trajectory,
        ``pairs="first"`` only ``(x_{j,0}, u_{j,0}, x_{j,1})``.
        """
        if pairs == "all":
            x = self.states[:, :-1].reshape(-1, self.n_x)
            u = self.controls.reshape(-1, self.n_u)
            xn = self.states[:, 1:].reshape(-1, self.n_x)
        elif pairs == "first":
            x, u, xn = self.states[:, 0], self.controls[:, 0], self.states[:, 1]
        else:
            raise ContractViolation(f"pairs must be 'all' or 'first', got {pairs!r}")
        return x, u, xn

    def truncated(self, horizon: int) -> "TrajectoryDataset":
        if not 1 <= horizon <= self.horizon:
            raise ContractViolation(f"cannot truncate horizon {self.horizon} to {horizon}")
        return TrajectoryDataset(self.states[:, :horizon + 1], self.controls[:, :horizon],
                                 self.plant, self.sampling)

    def subset(self, indices) -> "TrajectoryDataset":
        idx = np.asarray(indices)
        return TrajectoryDataset(self.states[idx], self.controls[idx], self.plant, self.sampling)

    @staticmethod
    def concatenate(datasets: Sequence["TrajectoryDataset"]) -> "TrajectoryDataset":
        first = datasets[0]
        return TrajectoryDataset(np.concatenate([d.states for d in datasets]),
                                 np.concatenate([d.controls for d in datasets]),
                                 first.plant, None)


def plant_derivative(plant: PlantSpec, x, u) -> np.ndarray:
    """Evaluate ``f(x, u)``; broadcasts over leading batch dimensions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != plant.n_x or u.shape[-1] != plant.n_u:
        raise ContractViolation(
            f"{plant.name} expects x of size {plant.n_x} and u of size {plant.n_u}, "
            f"got {x.shape} and {u.shape}")
    p = plant.params
    if plant.name == "VanDerPol":
        x1, x2 = x[..., 0], x[..., 1]
        dx2 = p["mu"] * (1.0 - x1 * x1) * x2 - p["omega0"] ** 2 * x1 + u[..., 0]
        return np.stack([x2, dx2], axis=-1)
    if plant.name == "Duffing":
        x1, x2 = x[..., 0], x[..., 1]
        dx2 = -p["delta"] * x2 - p["alpha"] * x1 - p["beta"] * x1 ** 3 + u[..., 0]
        return np.stack([x2, dx2], axis=-1)
    A, B = plant._A, plant._B
    return x @ A.T + u @ B.T


def _rk4(plant, x, u, h):
    k1 = plant_derivative(plant, x, u)
    k2 = plant_derivative(plant, x + 0.5 * h * k1, u)
    k3 = plant_derivative(plant, x + 0.5 * h * k2, u)
    k4 = plant_derivative(plant, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(plant: PlantSpec, x, u, h: float, trajectory: Optional[int] = None) -> np.ndarray:
    """Advance ``x`` by one classical RK4 step of length ``h`` with ``u`` held."""
    if not h > 0:
        raise ContractViolation("step length must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = _rk4(plant, np.asarray(x, dtype=float), np.asarray(u, dtype=float), h)
    if not np.isfinite(x_next).all():
        raise IntegrationOverflowError(
            f"non-finite state in RK4 step (trajectory {trajectory})", trajectory=trajectory)
    return x_next


def prbs_sequence(length: int, amp: float, rng: np.random.Generator, n_u: int = 1) -> np.ndarray:
    """Pseudo-random binary sequence of shape ``(length, n_u)`` with values ``+-amp``."""
    if amp < 0:
        raise ContractViolation("PRBS amplitude must be nonnegative")
    bits = rng.integers(0, 2, size=(length, n_u))
    return np.where(bits == 1, float(amp), -float(amp)) + 0.0


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def _sample_inputs(plant, spec, indices):
    lo = np.array([b[0] for b in spec.init_box])
    hi = np.array([b[1] for b in spec.init_box])
    x0 = np.empty((len(indices), plant.n_x))
    U = np.empty((len(indices), spec.horizon, plant.n_u))
    for row, j in enumerate(indices):
        rng = trajectory_rng(spec.seed, j)
        x0[row] = rng.uniform(lo, hi)
        U[row] = prbs_sequence(spec.horizon, spec.input_amp, rng, plant.n_u)
    return x0, U


def _simulate_chunk(plant, spec, indices):
    x0, U = _sample_inputs(plant, spec, indices)
    X = np.empty((len(indices), spec.horizon + 1, plant.n_x))
    X[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(spec.horizon):
            X[:, k + 1] = _rk4(plant, X[:, k], U[:, k], spec.step_size)
            bad = ~np.isfinite(X[:, k + 1]).all(axis=1)
            if bad.any():
                j = int(indices[int(np.argmax(bad))])
                raise IntegrationOverflowError(
                    f"trajectory {j} overflowed at step {k + 1}", trajectory=j, step=k + 1)
    return X, U


def generate_dataset(plant: PlantSpec, spec: SamplingSpec, threads: int = 1) -> TrajectoryDataset:
    """Simulate ``spec.num_trajectories`` trajectories of ``plant``.

    Trajectory ``j`` draws its initial state and PRBS input from its own
    generator (see :func:`trajectory_rng`), so the result does not depend on
    ``threads``.
    """
    if len(spec.init_box) != plant.n_x:
        raise ContractViolation("init_box must have one interval per state coordinate")
    n = spec.num_trajectories
    if threads <= 1:
        X, U = _simulate_chunk(plant, spec, np.arange(n))
    else:
        chunks = np.array_split(np.arange(n), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: _simulate_chunk(plant, spec, idx), chunks))
        X = np.concatenate([p[0] for p in parts])
        U = np.concatenate([p[1] for p in parts])
    log.debug("generated %d trajectories of %s", n, plant.name)
    return TrajectoryDataset(X, U, plant, spec)


def write_dataset_csv(dataset: TrajectoryDataset, path) -> None:
    """Write one row per ``(trajectory, step)``; controls are blank on the last step."""
    n_x, n_u, H = dataset.n_x, dataset.n_u, dataset.horizon
    header = (["traj", "step"] + [f"x{i + 1}" for i in range(n_x)]
              + [f"u{i + 1}" for i in range(n_u)])
    fmt = "{:.17g}".format
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(dataset.num_trajectories):
            for k in range(H + 1):
                xs = [fmt(v) for v in dataset.states[j, k]]
                us = [fmt(v) for v in dataset.controls[j, k]] if k < H else [""] * n_u
                writer.writerow([j, k] + xs + us)


def read_dataset_csv(path, plant: Optional[PlantSpec] = None,
                     sampling: Optional[SamplingSpec] = None) -> TrajectoryDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["traj", "step"]:
            raise ContractViolation(f"{path}: not a trajectory CSV (bad header)")
        n_x = sum(1 for h in header if h.startswith("x"))
        n_u = sum(1 for h in header if h.startswith("u"))
        rows = [r for r in reader if r]
    trajs = {}
    for r in rows:
        trajs.setdefault(int(r[0]), []).append(r)
    M = len(trajs)
    steps = {len(v) for v in trajs.values()}
    if len(steps) != 1:
        raise ContractViolation(f"{path}: trajectories have unequal lengths")
    H = steps.pop() - 1
    X = np.empty((M, H + 1, n_x))
    U = np.empty((M, H, n_u))
    for j, key in enumerate(sorted(trajs)):
        for r in trajs[key]:
            k = int(r[1])
            X[j, k] = [float(v) for v in r[2:2 + n_x]]
            if k < H:
                U[j, k] = [float(v) for v in r[2 + n_x:2 + n_x + n_u]]
    return TrajectoryDataset(X, U, plant, sampling)
