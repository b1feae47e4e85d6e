"""Learned manifold metric and the single-problem gradient planner.

Constraint terms are weighted by ``exp(alpha_i)``.  After every descent
step each ``alpha_i`` moves by ``gamma * log(L_i / budget_i)``: a term
over its budget gains weight, one under budget loses it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .constraints import ConstraintSet, LossBreakdown, evaluate_terms, weighted_total
from .trajectory import (Layout, PhaseTrajectory, assemble_inner_control_points,
                         boundary_constants, boundary_points, make_trajectory,
                         path_control_points)

__all__ = [
    "ManifoldMetric", "OptimizerConfig", "PlanResult", "TrajectoryObjective",
    "weighted_manifold_loss", "alpha_update", "loss_gradient", "initial_guess", "direct_plan",
]

LOSS_FLOOR = 1e-12


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldMetric:
    alpha: np.ndarray
    gamma: float = 1e-2

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise MetricError("alpha must be finite")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def zeros(cls, k: int, gamma: float = 1e-2) -> "ManifoldMetric":
        return cls(np.zeros(k), gamma)

    @classmethod
    def from_weights(cls, weights, gamma: float = 1e-2) -> "ManifoldMetric":
        return cls(np.log(np.asarray(weights, dtype=float)), gamma)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.alpha)


def weighted_manifold_loss(breakdown: LossBreakdown, metric: ManifoldMetric) -> float:
    per = np.asarray(breakdown.per_term, float)
    if per.shape != metric.alpha.shape:
        raise MetricError("metric length does not match the number of loss terms")
    return float(np.sum(np.exp(metric.alpha) * per))


def alpha_update(metric: ManifoldMetric, per_term_losses, budgets) -> ManifoldMetric:
    """One step of ``alpha_i += gamma * log(max(L_i, floor) / budget_i)``."""
    L = np.asarray(per_term_losses, dtype=float).reshape(-1)
    C = np.asarray(budgets, dtype=float).reshape(-1)
    if L.shape != C.shape or L.shape != metric.alpha.shape:
        raise MetricError("losses, budgets and alpha must align")
    if np.any(C <= 0):
        raise MetricError("budgets must be positive")
    step = metric.gamma * np.log(np.maximum(L, LOSS_FLOOR) / C)
    return ManifoldMetric(metric.alpha + step, metric.gamma)


# ---------------------------------------------------------------- objective

class TrajectoryObjective:
    """Loss of one problem as a function of a flat parameter vector.

    The vector holds the interior path control points (row-major) followed
    by the logarithms of the rate control points.  Boundary control points
    are recomputed from the rate points on every call.
    """

    def __init__(self, problem, model, layout: Layout = Layout(), N: int = 200):
        self.problem = problem
        self.model = model
        self.layout = layout
        self.N = N
        self.cset: ConstraintSet = problem.constraints
        self.bc = problem.bc
        self.n = problem.bc.n
        self.consts = boundary_constants(layout)
        self.n_path = layout.n_free * self.n

    @property
    def size(self) -> int:
        return self.n_path + self.layout.C_r

    def pack(self, interior, rate_cps) -> np.ndarray:
        return np.concatenate([np.asarray(interior, float).reshape(-1),
                               np.log(np.asarray(rate_cps, float).reshape(-1))])

    def _control_points(self, x):
        inner = x[: self.n_path].reshape(self.layout.n_free, self.n)
        R = ad.exp(x[self.n_path:])
        bc = self.bc
        P = path_control_points((bc.q0, bc.dq0, bc.ddq0, bc.qd, bc.dqd), R, inner,
                                self.consts, self.layout.C_p, free_is_offset=False)
        return P, R

    def trajectory(self, x) -> PhaseTrajectory:
        x = np.asarray(x, float)
        return make_trajectory(self.bc, np.exp(x[self.n_path:]),
                               x[: self.n_path].reshape(self.layout.n_free, self.n),
                               self.layout, free_is_offset=False)

    def terms(self, x):
        P, R = self._control_points(x)
        return evaluate_terms(P, R, self.model, self.cset, self.layout, self.N)

    def value(self, x, alpha) -> float:
        task, per = self.terms(np.asarray(x, float))
        return float(weighted_total(task, per, alpha))

    def value_and_grad(self, x, alpha):
        """(total, gradient, task, per-term losses)."""
        t = ad.Tensor(np.array(x, dtype=float))
        task, per = self.terms(t)
        total = weighted_total(task, per, alpha)
        total.backward()
        return float(total.value), t.grad.copy(), float(ad.value(task)), ad.value(per).copy()


def loss_gradient(free_params, problem, metric: ManifoldMetric, N: int = 200, model=None,
                  layout: Layout = Layout()) -> np.ndarray:
    """Exact gradient of the weighted trajectory loss w.r.t. the free parameters."""
    from .robotmodel import default_model

    obj = TrajectoryObjective(problem, model or default_model(), layout, N)
    return obj.value_and_grad(free_params, metric.alpha)[1]


def initial_guess(problem, model, layout: Layout = Layout()) -> np.ndarray:
    """Straight interior segment and a constant rate from a velocity-limit time estimate."""
    bc = problem.bc
    t_guess = max(float(np.max(np.abs(bc.qd - bc.q0) / model.dq_limits)), 0.1)
    R = np.full(layout.C_r, 1.0 / t_guess)
    _, _, p2, p_pen, _ = boundary_points(bc.q0, bc.dq0, bc.ddq0, bc.qd, bc.dqd, R,
                                         boundary_constants(layout))
    interior = assemble_inner_control_points(p2, p_pen, np.zeros((layout.n_free, bc.n)), layout.C_p)
    return np.concatenate([interior.reshape(-1), np.log(R)])


# ---------------------------------------------------------------- planner

@dataclass
class OptimizerConfig:
    max_iters: int = 1500
    path_step: float = 5e-3
    rate_step: float = 1e-3
    N: int = 200
    tol: float = 1e-9
    method: str = "adam"  # "adam" or "sgd"
    decay: float = 0.1  # step multiplier reached at max_iters (geometric schedule)
    budget_margin: float = 0.8  # plan against this fraction of each budget
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.max_iters <= 0 or self.path_step <= 0 or self.rate_step <= 0 or self.N < 16:
            raise MetricError("optimizer settings must be positive (N >= 16)")
        if not 0 < self.budget_margin <= 1:
            raise MetricError("budget_margin must lie in (0, 1]")
        if self.method not in ("adam", "sgd"):
            raise MetricError(f"unknown method {self.method!r}")


@dataclass
class PlanResult:
    trajectory: PhaseTrajectory
    history: list
    iterations: int
    converged: bool
    metric: ManifoldMetric
    params: np.ndarray = field(repr=False, default=None)
    diverged: bool = False

    def to_json(self) -> dict:
        return {
            "trajectory": self.trajectory.to_json(),
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "alpha": self.metric.alpha.tolist(),
            "history": [b.as_dict() for b in self.history],
        }


def direct_plan(problem, init=None, cfg: OptimizerConfig | None = None,
                metric: ManifoldMetric | None = None, model=None,
                layout: Layout = Layout()) -> PlanResult:
    """Descend the weighted loss of a single problem, updating the metric every step.

    Returns the feasible iterate (every term within budget) with the lowest
    task loss; if no iterate was feasible, the one with the smallest summed
    log-excess over the budgets.
    """
    from .robotmodel import default_model

    cfg = cfg or OptimizerConfig()
    model = model or default_model()
    obj = TrajectoryObjective(problem, model, layout, cfg.N)
    budgets = obj.cset.budgets * cfg.budget_margin
    metric = metric or ManifoldMetric.zeros(len(budgets))
    x = initial_guess(problem, model, layout) if init is None else np.array(init, dtype=float)

    steps = np.concatenate([np.full(obj.n_path, cfg.path_step), np.full(layout.C_r, cfg.rate_step)])
    m1 = np.zeros_like(x)
    m2 = np.zeros_like(x)
    history = []
    best = None  # (feasible, score, x, metric)
    converged = diverged = False
    prev_total = math.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        total, g, task, per = obj.value_and_grad(x, metric.alpha)
        if not (np.isfinite(total) and np.all(np.isfinite(g))):
            diverged = True
            break
        history.append(LossBreakdown(obj.cset.kinds, per, task, total))
        feasible = bool(np.all(per <= budgets))
        score = task if feasible else float(np.sum(np.maximum(np.log(np.maximum(per, LOSS_FLOOR) / budgets), 0)))
        if best is None or (feasible, -score) > (best[0], -best[1]):
            best = (feasible, score, x.copy(), metric)
        if feasible and abs(prev_total - total) <= cfg.tol * max(1.0, abs(total)):
            converged = True
            break
        prev_total = total

        lr = steps * cfg.decay ** ((it - 1) / cfg.max_iters)
        if cfg.method == "adam":
            m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g
            m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * g * g
            mh = m1 / (1 - cfg.beta1 ** it)
            vh = m2 / (1 - cfg.beta2 ** it)
            x = x - lr * mh / (np.sqrt(vh) + 1e-12)
        else:
            x = x - lr * g
        metric = alpha_update(metric, per, budgets)

    if best is None:
        raise MetricError("optimisation produced no finite iterate")
    feasible, _, xb, mb = best
    traj = obj.trajectory(xb)
    return PlanResult(traj, history, it, converged or feasible, mb, xb, diverged)
