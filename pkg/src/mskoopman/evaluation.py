"""Open-loop multi-step prediction error on held-out trajectories."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

from .dynamics import TrajectoryDataset
from .edmd_multistep import CondensedModel
from .errors import ContractViolation


@dataclass(frozen=True, eq=False)
class MseSeries:
    """``MSE(k)`` for ``k = 1..H`` of one model.

    ``nonfinite[k-1]`` counts test trajectories whose prediction at step
    ``k`` is not finite; the corresponding ``values`` entry is ``inf``.
    """

    name: str
    values: np.ndarray
    nonfinite: np.ndarray
    num_samples: int
    provenance: str = ""

    @property
    def overflowed(self) -> bool:
        return bool(np.any(self.nonfinite > 0) or not np.all(np.isfinite(self.values)))

    @property
    def H(self) -> int:
        return self.values.shape[0]

    def ratio_max_min(self) -> float:
        return float(np.max(self.values) / np.min(self.values))

    def ratio_last_first(self) -> float:
        return float(self.values[-1] / self.values[0])


@dataclass(frozen=True, eq=False)
class MseReport:
    series: Sequence[MseSeries]
    meta: Mapping[str, object] = field(default_factory=dict)

    def __getitem__(self, name: str) -> MseSeries:
        for s in self.series:
            if s.name == name:
                return s
        raise KeyError(name)


def squared_errors(model: CondensedModel, test: TrajectoryDataset) -> np.ndarray:
    """``||x_true - x_pred||^2`` per trajectory and step, shape ``(M, H)``."""
    if test.horizon < model.H:
        raise ContractViolation(f"test horizon {test.horizon} < model horizon {model.H}")
    with np.errstate(over="ignore", invalid="ignore"):
        pred = model.predict(test.states[:, 0], test.controls[:, :model.H])
        return np.sum((test.states[:, 1:model.H + 1] - pred) ** 2, axis=-1)


def evaluate_mse(model: CondensedModel, test: TrajectoryDataset, name: str = "model") -> MseSeries:
    """Mean over test trajectories of the squared prediction error at each step."""
    err = squared_errors(model, test)
    bad = ~np.isfinite(err)
    nonfinite = bad.sum(axis=0)
    values = np.where(nonfinite > 0, np.inf, np.mean(np.where(bad, 0.0, err), axis=0))
    return MseSeries(name, values, nonfinite, test.num_trajectories, model.provenance)


def mse_report(models: Mapping[str, CondensedModel], test: TrajectoryDataset,
               **meta) -> MseReport:
    series = [evaluate_mse(m, test, name) for name, m in models.items()]
    return MseReport(series, dict(meta, test_size=test.num_trajectories))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.17g}"


def write_mse_csv(report: MseReport, path) -> None:
    """``k,mse_<name>,...``; models with shorter horizons leave trailing cells blank."""
    H = max(s.H for s in report.series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"mse_{s.name}" for s in report.series])
        for k in range(H):
            w.writerow([k + 1] + [_fmt(s.values[k]) if k < s.H else "" for s in report.series])


def read_mse_csv(path) -> Dict[str, list]:
    """Column name -> list of raw cell strings (no numeric conversion)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "k":
        raise ContractViolation(f"{path}: not an MSE table")
    return {name: [r[c] for r in rows[1:]] for c, name in enumerate(rows[0])}
