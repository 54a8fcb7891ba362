"""Receding-horizon closed-loop simulation on the true plant."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dynamics import PlantSpec, rk4_step
from .edmd_multistep import CondensedModel
from .errors import ContractViolation, InfeasibleQPError
from .qp import MpcConfig, build_qp, solve_qp

log = logging.getLogger(__name__)


def shift_warm_start(U: np.ndarray, n_u: int) -> np.ndarray:
    """Drop the first input block and duplicate the last one."""
    U = np.asarray(U, dtype=float)
    return np.concatenate([U[n_u:], U[-n_u:]])


@dataclass
class ClosedLoopRun:
    """Closed-loop experiment and, after :func:`run_closed_loop`, its outputs.

    ``states`` has ``steps_completed + 1`` rows and ``inputs``
    ``steps_completed`` rows; they reach ``sim_steps`` unless a QP turned
    out infeasible, in which case ``infeasible_step`` and ``certificate``
    are set.
    """

    plant: PlantSpec
    model: CondensedModel
    config: MpcConfig
    x0: np.ndarray
    sim_steps: int
    Ts: float
    record_plans: bool = False
    qp_max_iter: int = 1000
    states: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    qp_iterations: Optional[np.ndarray] = None
    qp_status: List[str] = field(default_factory=list)
    plans: List[np.ndarray] = field(default_factory=list)
    warm_starts: List[Optional[np.ndarray]] = field(default_factory=list)
    infeasible_step: Optional[int] = None
    certificate: Optional[InfeasibleQPError] = None

    @property
    def steps_completed(self) -> int:
        return 0 if self.inputs is None else self.inputs.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.Ts * np.arange(self.steps_completed + 1)

    def first_hitting_time(self, radius: float) -> Optional[float]:
        """Earliest time with ``||x||_inf < radius``, or ``None``."""
        hit = np.flatnonzero(np.max(np.abs(self.states), axis=1) < radius)
        return float(self.times[hit[0]]) if hit.size else None


def run_closed_loop(run: ClosedLoopRun) -> ClosedLoopRun:
    """Simulate ``run.sim_steps`` MPC steps and fill the run in place.

    Each step lifts the measured state once (inside :func:`build_qp`),
    solves the QP warm-started from the shifted previous plan, applies the
    first input block and advances the plant by one RK4 step.
    """
    cfg, plant = run.config, run.plant
    if run.model.H < cfg.H:
        raise ContractViolation("model horizon shorter than MPC horizon")
    if run.sim_steps < 0:
        raise ContractViolation("sim_steps must be nonnegative")
    n_u = cfg.n_u
    x = np.asarray(run.x0, dtype=float).copy()
    states, inputs, iters, status = [x.copy()], [], [], []
    warm = None
    for t in range(run.sim_steps):
        qp = build_qp(run.model, cfg, x)
        try:
            sol = solve_qp(qp, warm, max_iter=run.qp_max_iter)
        except InfeasibleQPError as exc:
            log.warning("QP infeasible at step %d: %s", t, exc)
            run.infeasible_step, run.certificate = t, exc
            break
        if not sol.optimal:
            log.warning("QP at step %d returned status %s", t, sol.status)
        if run.record_plans:
            run.plans.append(sol.U.copy())
            run.warm_starts.append(None if warm is None else warm.copy())
        u = sol.U[:n_u].copy()
        x = rk4_step(plant, x, u, run.Ts)
        states.append(x.copy())
        inputs.append(u)
        iters.append(sol.iterations)
        status.append(sol.status)
        warm = shift_warm_start(sol.U, n_u)
    run.states = np.array(states)
    run.inputs = np.array(inputs).reshape(-1, n_u)
    run.qp_iterations = np.array(iters, dtype=int)
    run.qp_status = status
    return run


def write_closed_loop_csv(run: ClosedLoopRun, path) -> None:
    """``step,t,x1..xn,u1..um,qp_iters,qp_status``; the last state row has no input."""
    n_x, n_u = run.states.shape[1], run.config.n_u
    fmt = "{:.17g}".format
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t"] + [f"x{i + 1}" for i in range(n_x)]
                   + [f"u{i + 1}" for i in range(n_u)] + ["qp_iters", "qp_status"])
        for k in range(run.states.shape[0]):
            row = [k, fmt(k * run.Ts)] + [fmt(v) for v in run.states[k]]
            if k < run.steps_completed:
                row += [fmt(v) for v in run.inputs[k]] + [int(run.qp_iterations[k]), run.qp_status[k]]
            else:
                row += [""] * n_u + ["", "infeasible" if run.infeasible_step == k else ""]
            w.writerow(row)
