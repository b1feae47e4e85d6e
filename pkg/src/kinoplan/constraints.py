"""Constraint-manifold losses and their integration along a trajectory.

Each constraint contributes a non-negative step loss that is zero on
states satisfying it.  Inequalities enter through ``relu`` (the squared
form ``max(c, 0)^2`` is what remains of an inequality once its slack
variable is minimised out), equalities enter directly.  Step losses are
integrated over phase with weight ``1/r(s)``, i.e. over wall-clock time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import robotmodel as rm
from .trajectory import Layout, PhaseTrajectory, grid_bases, grid_states

__all__ = [
    "KINDS", "DEFAULT_BUDGETS", "ConstraintTerm", "ConstraintSet", "LossBreakdown",
    "inequality_penalty", "huber", "velocity_loss", "acceleration_loss", "torque_loss",
    "surface_loss", "orientation_loss", "robot_collision_loss", "object_collision_loss",
    "task_step_loss", "integrate_trajectory_loss", "evaluate_terms",
]

KINDS = ("surface", "velocity", "acceleration", "torque", "orientation",
         "robot_collision", "object_collision")

# tolerable squared violation per kind
DEFAULT_BUDGETS = {
    "surface": 2e-6,
    "velocity": 6e-3,
    "acceleration": 6e-2,
    "torque": 6e-1,
    "orientation": 1e-5,
    "robot_collision": 1e-6,
    "object_collision": 1e-6,
}

HUBER_DELTA = 1.0
DEFAULT_CLEARANCE = 0.15
DEFAULT_SPACING = 0.1


class ConstraintError(ValueError):
    pass


def inequality_penalty(c):
    """Squared positive part ``max(c, 0)**2``."""
    return ad.relu(c) ** 2 if ad.is_tensor(c) else np.maximum(c, 0.0) ** 2


def huber(x, delta: float = HUBER_DELTA):
    """Quadratic within ``delta`` of zero, linear beyond."""
    if delta <= 0:
        raise ConstraintError("huber delta must be positive")
    return ad.huber(x, delta)


def _min(a, b):
    return ad.where(ad.value(a) <= ad.value(b), a, b)


def _max(a, b):
    return ad.where(ad.value(a) >= ad.value(b), a, b)


def _limit_step(x, limits, delta):
    return ad.sum_(huber(ad.relu(ad.abs_(x) - limits), delta), axis=-1)


# ---------------------------------------------------------------- step losses (broadcasting)

def velocity_step(model, dq, delta=HUBER_DELTA):
    return _limit_step(dq, model.dq_limits, delta)


def acceleration_step(model, ddq, delta=HUBER_DELTA):
    return _limit_step(ddq, model.ddq_limits, delta)


def torque_step(model, q, dq, ddq, delta=HUBER_DELTA):
    return _limit_step(rm.inverse_dynamics(model, q, dq, ddq), model.tau_limits, delta)


def surface_step(model, q, bounds, delta=HUBER_DELTA):
    x, y, _ = rm.ee_position(model, q)
    return (huber(ad.relu(bounds["x_lo"] - x), delta)
            + huber(ad.relu(x - bounds["x_hi"]), delta)
            + huber(y - bounds["y_line"], delta))


def orientation_step(model, q, heading_d, delta=HUBER_DELTA):
    _, _, th = rm.ee_position(model, q)
    return huber(1.0 - ad.cos(th - heading_d), delta)


def _box_distance(px, py, box):
    x_lo, y_lo, x_hi, y_hi = box
    dx = _max(_max(x_lo - px, px - x_hi), np.zeros(ad.value(px).shape))
    dy = _max(_max(y_lo - py, py - y_hi), np.zeros(ad.value(py).shape))
    return ad.safe_norm(dx, dy)


def _box_penetration(px, py, box):
    x_lo, y_lo, x_hi, y_hi = box
    depth = _min(_min(px - x_lo, x_hi - px), _min(py - y_lo, y_hi - py))
    return ad.relu(depth)


def robot_collision_step(model, q, boxes, clearance=DEFAULT_CLEARANCE,
                         spacing=DEFAULT_SPACING, delta=HUBER_DELTA):
    px, py = rm.chain_points_xy(model, q, spacing)
    dist = None
    for box in boxes:
        d = _box_distance(px, py, box)
        dist = d if dist is None else _min(dist, d)
    if dist is None:
        return 0.0 * ad.sum_(px, axis=-1)
    return huber(ad.sum_(ad.relu(clearance - dist), axis=-1), delta)


def object_corner_xy(model, q, corners):
    """World coordinates of object corners given in the end-effector frame."""
    x, y, th = rm.ee_position(model, q)
    c, s = ad.cos(th)[..., None], ad.sin(th)[..., None]
    cx, cy = np.asarray(corners, float)[:, 0], np.asarray(corners, float)[:, 1]
    return x[..., None] + c * cx - s * cy, y[..., None] + s * cx + c * cy


def object_collision_step(model, q, corners, boxes, delta=HUBER_DELTA):
    px, py = object_corner_xy(model, q, corners)
    total = 0.0 * ad.sum_(px, axis=-1)
    for box in boxes:
        total = total + ad.sum_(_box_penetration(px, py, box), axis=-1)
    return huber(total, delta)


def task_step(model, q, dq, ddq, eta):
    if eta == 0:
        return 1.0 + 0.0 * ad.sum_(q, axis=-1)
    kappa, speed = rm.curvature_speed_terms(model, q, dq, ddq)
    return 1.0 + eta * kappa * speed * speed


# ---------------------------------------------------------------- scalar public forms

def velocity_loss(model, dq, delta=HUBER_DELTA) -> float:
    return float(velocity_step(model, np.asarray(dq, float), delta))


def acceleration_loss(model, ddq, delta=HUBER_DELTA) -> float:
    return float(acceleration_step(model, np.asarray(ddq, float), delta))


def torque_loss(model, q, dq, ddq, delta=HUBER_DELTA) -> float:
    return float(torque_step(model, *(np.asarray(v, float) for v in (q, dq, ddq)), delta))


def surface_loss(model, q, bounds, delta=HUBER_DELTA) -> float:
    return float(surface_step(model, np.asarray(q, float), bounds, delta))


def orientation_loss(model, q, heading_d, delta=HUBER_DELTA) -> float:
    return float(orientation_step(model, np.asarray(q, float), heading_d, delta))


def robot_collision_loss(model, q, boxes, clearance=DEFAULT_CLEARANCE,
                         spacing=DEFAULT_SPACING, delta=HUBER_DELTA) -> float:
    return float(robot_collision_step(model, np.asarray(q, float), boxes, clearance, spacing, delta))


def object_collision_loss(object_corners, boxes, delta=HUBER_DELTA) -> float:
    """Loss for world-frame corner points ``(K, 2)`` against axis-aligned boxes."""
    pts = np.asarray(object_corners, float).reshape(-1, 2)
    total = 0.0
    for box in boxes:
        total += float(np.sum(_box_penetration(pts[:, 0], pts[:, 1], box)))
    return float(huber(total, delta))


def task_step_loss(model, q, dq, ddq, eta=0.01) -> float:
    if eta < 0:
        raise ConstraintError("eta must be non-negative")
    return float(task_step(model, *(np.asarray(v, float) for v in (q, dq, ddq)), eta))


# ---------------------------------------------------------------- constraint sets

@dataclass(frozen=True)
class ConstraintTerm:
    kind: str
    budget: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintError(f"unknown constraint kind {self.kind!r}")
        if not self.budget > 0:
            raise ConstraintError(f"budget for {self.kind} must be positive")

    def step(self, model, q, dq, ddq, delta=HUBER_DELTA):
        p = self.params
        if self.kind == "velocity":
            return velocity_step(model, dq, delta)
        if self.kind == "acceleration":
            return acceleration_step(model, ddq, delta)
        if self.kind == "torque":
            return torque_step(model, q, dq, ddq, delta)
        if self.kind == "surface":
            return surface_step(model, q, p, delta)
        if self.kind == "orientation":
            return orientation_step(model, q, p["heading"], delta)
        if self.kind == "robot_collision":
            return robot_collision_step(model, q, p["boxes"], p.get("clearance", DEFAULT_CLEARANCE),
                                        p.get("spacing", DEFAULT_SPACING), delta)
        return object_collision_step(model, q, p["corners"], p["boxes"], delta)

    def to_json(self) -> dict:
        return {"kind": self.kind, "budget": self.budget, "params": _jsonable(self.params)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered constraint terms plus the task-loss curvature factor ``eta``."""

    terms: tuple
    eta: float = 0.0
    delta: float = HUBER_DELTA

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        kinds = [t.kind for t in self.terms]
        if len(set(kinds)) != len(kinds):
            raise ConstraintError("each constraint kind may appear once")

    @property
    def kinds(self) -> list:
        return [t.kind for t in self.terms]

    @property
    def budgets(self) -> np.ndarray:
        return np.array([t.budget for t in self.terms])

    def to_json(self) -> dict:
        return {"eta": self.eta, "huber_delta": self.delta,
                "terms": [t.to_json() for t in self.terms]}

    @classmethod
    def from_json(cls, d: dict) -> "ConstraintSet":
        terms = [ConstraintTerm(t["kind"], float(t["budget"]), t.get("params", {}))
                 for t in d["terms"]]
        return cls(terms, float(d.get("eta", 0.0)), float(d.get("huber_delta", HUBER_DELTA)))


@dataclass
class LossBreakdown:
    kinds: list
    per_term: np.ndarray
    task: float
    total: float

    def as_dict(self) -> dict:
        return {"task": self.task, "total": self.total,
                "terms": {k: float(v) for k, v in zip(self.kinds, self.per_term)}}


def evaluate_terms(P, R, model, cset: ConstraintSet, layout: Layout, N: int):
    """Integrated task loss (...,) and per-term losses (..., K) for control points P, R.

    Works on plain arrays or tensors; ``P`` is (..., C_p, n), ``R`` is (..., C_r).
    """
    q, dq, ddq, r = grid_states(P, R, grid_bases(layout, N))
    w = (1.0 / r) / N
    task = ad.sum_(task_step(model, q, dq, ddq, cset.eta) * w, axis=-1)
    per = [ad.sum_(t.step(model, q, dq, ddq, cset.delta) * w, axis=-1) for t in cset.terms]
    if not per:
        return task, 0.0 * task[..., None]
    return task, ad.stack(per, axis=-1)


def weighted_total(task, per_term, alpha):
    """``task + sum_i exp(alpha_i) * per_term_i``."""
    return task + ad.sum_(per_term * np.exp(np.asarray(alpha, float)), axis=-1)


def integrate_trajectory_loss(traj: PhaseTrajectory, model, terms: ConstraintSet, metric=None,
                              N: int = 200) -> LossBreakdown:
    """Loss breakdown of a trajectory on an ``N``-cell midpoint grid.

    ``metric`` is anything with an ``alpha`` vector aligned with ``terms``;
    ``None`` means unit weights.
    """
    if N < 16:
        raise ConstraintError("N must be >= 16")
    P = traj.path.control_points
    R = traj.rate.control_points[:, 0]
    task, per = evaluate_terms(P, R, model, terms, traj.layout, N)
    alpha = np.zeros(len(terms.terms)) if metric is None else np.asarray(metric.alpha, float)
    if alpha.shape[0] != len(terms.terms):
        raise ConstraintError("metric length does not match the constraint set")
    per = np.atleast_1d(np.asarray(per, float))
    total = float(weighted_total(float(task), per, alpha))
    return LossBreakdown(terms.kinds, per, float(task), total)
