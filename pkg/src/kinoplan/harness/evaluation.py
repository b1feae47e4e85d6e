"""Dense-grid validation of planned trajectories and aggregate planner reports."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..constraints import integrate_trajectory_loss
from ..robotmodel import ee_position
from ..serialize import dumps17, fmt17
from ..trajectory import PhaseTrajectory, grid_bases, grid_states, kinematic_state_at_phase, duration
from .problems import REACH

__all__ = ["Metrics", "Report", "EvaluationError", "validate_trajectory", "evaluate_planner",
           "write_report_csv", "write_report_json"]

MIN_DENSE = 1024


class EvaluationError(ValueError):
    pass


@dataclass
class Metrics:
    T: float
    kinds: list
    integrals: np.ndarray
    max_step: np.ndarray
    budgets: np.ndarray
    boundary_residuals: dict
    task_loss: float
    line_deviation: float | None = None  # time-integrated |ee_y - y_line| (m*s), reach only
    planning_time: float = 0.0
    success: bool = field(init=False)

    def __post_init__(self):
        self.success = bool(np.all(self.integrals <= self.budgets))

    @property
    def max_boundary_residual(self) -> float:
        return max(self.boundary_residuals.values())

    def row(self) -> dict:
        out = {"T": self.T, "success": int(self.success), "planning_time": self.planning_time,
               "task_loss": self.task_loss}
        for k, v, m in zip(self.kinds, self.integrals, self.max_step):
            out[f"int_{k}"] = float(v)
            out[f"max_{k}"] = float(m)
        for k, v in self.boundary_residuals.items():
            out[f"res_{k}"] = v
        if self.line_deviation is not None:
            out["line_deviation"] = self.line_deviation
        return out


def validate_trajectory(traj: PhaseTrajectory, problem, model, N_dense: int = MIN_DENSE,
                        planning_time: float = 0.0) -> Metrics:
    """Violation integrals, instantaneous maxima and endpoint residuals at validation resolution."""
    if N_dense < MIN_DENSE:
        raise EvaluationError(f"N_dense must be >= {MIN_DENSE}")
    cset = problem.constraints
    breakdown = integrate_trajectory_loss(traj, model, cset, None, N_dense)

    P = traj.path.control_points
    R = traj.rate.control_points[:, 0]
    q, dq, ddq, r = grid_states(P, R, grid_bases(traj.layout, N_dense))
    steps = [np.asarray(t.step(model, q, dq, ddq, cset.delta), float) for t in cset.terms]
    max_step = np.array([float(np.max(s)) if s.size else 0.0 for s in steps])

    bc = problem.bc
    q_0, dq_0, ddq_0 = kinematic_state_at_phase(traj, 0.0)
    q_1, dq_1, _ = kinematic_state_at_phase(traj, 1.0)
    res = {
        "q0": float(np.max(np.abs(q_0 - bc.q0))),
        "dq0": float(np.max(np.abs(dq_0 - bc.dq0))),
        "ddq0": float(np.max(np.abs(ddq_0 - bc.ddq0))),
        "qd": float(np.max(np.abs(q_1 - bc.qd))),
        "dqd": float(np.max(np.abs(dq_1 - bc.dqd))),
    }

    line_dev = None
    if problem.task == REACH:
        _, y, _ = ee_position(model, q)
        line_dev = float(np.sum(np.abs(y - problem.geometry["y_line"]) / r) / N_dense)

    return Metrics(duration(traj, N_dense), list(cset.kinds), np.asarray(breakdown.per_term, float),
                   max_step, cset.budgets, res, breakdown.task, line_dev, float(planning_time))


# ---------------------------------------------------------------- planner evaluation

def _stats(x) -> dict:
    x = np.asarray(x, float)
    return {"mean": float(np.mean(x)), "median": float(np.median(x)),
            "p95": float(np.percentile(x, 95))}


@dataclass
class Report:
    metrics: list
    config: dict = field(default_factory=dict)

    @property
    def success_ratio(self) -> float:
        return float(np.mean([m.success for m in self.metrics]))

    def rows(self) -> list:
        return [{"index": i, **m.row()} for i, m in enumerate(self.metrics)]

    def summary(self) -> dict:
        """Aggregates; recomputable from :meth:`rows` alone."""
        ms = self.metrics
        out = {
            "count": len(ms),
            "success_ratio": self.success_ratio,
            "T": _stats([m.T for m in ms]),
            "planning_time": _stats([m.planning_time for m in ms]),
            "max_boundary_residual": max(m.max_boundary_residual for m in ms),
        }
        devs = [m.line_deviation for m in ms if m.line_deviation is not None]
        if devs:
            out["line_deviation"] = _stats(devs)
        return out


def evaluate_planner(planner, dataset, model, N_dense: int = MIN_DENSE, clock=time.perf_counter,
                     config: dict | None = None) -> Report:
    """Run ``planner(problem) -> PhaseTrajectory`` on every problem, in index order.

    ``dataset`` is a :class:`Dataset` or a plain sequence of problems.
    """
    problems = dataset.problems if hasattr(dataset, "problems") else list(dataset)
    if not problems:
        raise EvaluationError("dataset is empty")
    metrics = []
    for p in problems:
        t0 = clock()
        traj = planner(p)
        elapsed = clock() - t0
        metrics.append(validate_trajectory(traj, p, model, N_dense, elapsed))
    return Report(metrics, dict(config or {}))


def write_report_csv(report: Report, path) -> None:
    rows = report.rows()
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt17(v) if isinstance(v, float) else v for k, v in row.items()})


def write_report_json(report: Report, path) -> None:
    with open(path, "w") as f:
        f.write(dumps17({"config": report.config, "summary": report.summary()}) + "\n")
