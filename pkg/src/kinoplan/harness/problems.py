"""Planning problems and the two planar task generators.

``reach_on_line``: the end effector must stay on the line ``y = y_line``
between ``x_lo`` and ``x_hi`` while travelling to a target, arriving with a
prescribed velocity along the line.  Time-optimal with a curvature penalty.

``transfer_with_orientation``: carry an object held at the end effector
from one pedestal to the other with a fixed heading, avoiding both
pedestals with robot and object.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..constraints import DEFAULT_BUDGETS, ConstraintSet, ConstraintTerm, orientation_loss, \
    robot_collision_loss, surface_loss, object_corner_xy, object_collision_loss, torque_loss
from ..robotmodel import PlanarArmModel, forward_kinematics, jacobian
from ..serialize import dumps17
from ..trajectory import BoundaryConditions

__all__ = [
    "PlanningProblem", "Dataset", "ReachGeometry", "TransferGeometry",
    "reach_constraints", "transfer_constraints", "default_alpha",
    "generate_reach_problems", "generate_transfer_problems", "solve_ik",
    "GenerationError", "REACH", "TRANSFER", "MAX_ATTEMPTS",
]

REACH = "reach_on_line"
TRANSFER = "transfer_with_orientation"
MAX_ATTEMPTS = 1000


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanningProblem:
    bc: BoundaryConditions
    task: str
    geometry: dict
    constraints: ConstraintSet

    def to_json(self) -> dict:
        return {"task": self.task, "bc": self.bc.to_json(), "geometry": _plain(self.geometry),
                "constraints": self.constraints.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "PlanningProblem":
        return cls(BoundaryConditions.from_json(d["bc"]), d["task"], d["geometry"],
                   ConstraintSet.from_json(d["constraints"]))

    def with_bc(self, bc: BoundaryConditions) -> "PlanningProblem":
        return PlanningProblem(bc, self.task, self.geometry, self.constraints)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class Dataset:
    problems: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int

    def __post_init__(self):
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.val_idx = np.asarray(self.val_idx, dtype=int)
        both = np.concatenate([self.train_idx, self.val_idx])
        if len(set(both.tolist())) != len(both) or sorted(both.tolist()) != list(range(len(self.problems))):
            raise ValueError("train/validation split must be disjoint and cover all problems")

    def __len__(self):
        return len(self.problems)

    @property
    def train(self) -> list:
        return [self.problems[i] for i in self.train_idx]

    @property
    def val(self) -> list:
        return [self.problems[i] for i in self.val_idx]

    @classmethod
    def from_problems(cls, problems, seed: int, val_fraction: float = 0.0) -> "Dataset":
        n_val = int(round(len(problems) * val_fraction))
        idx = np.arange(len(problems))
        return cls(list(problems), idx[: len(problems) - n_val], idx[len(problems) - n_val:], seed)

    def dumps(self, meta: dict | None = None) -> str:
        """JSON lines, one problem per line, preceded by an optional ``{"meta": ...}`` line."""
        val = set(self.val_idx.tolist())
        lines = [] if meta is None else [dumps17({"meta": meta}, indent=None)]
        for i, p in enumerate(self.problems):
            row = p.to_json()
            row["split"] = "val" if i in val else "train"
            row["seed"] = self.seed
            lines.append(dumps17(row, indent=None))
        return "\n".join(lines) + "\n"

    def save(self, path, meta: dict | None = None) -> None:
        with open(path, "w") as f:
            f.write(self.dumps(meta))

    @classmethod
    def load(cls, path) -> "Dataset":
        problems, val, seed = [], [], 0
        with open(path) as f:
            rows = (json.loads(l) for l in f if l.strip())
            for i, row in enumerate(r for r in rows if "meta" not in r):
                problems.append(PlanningProblem.from_json(row))
                if row.get("split") == "val":
                    val.append(i)
                seed = row.get("seed", seed)
        train = [i for i in range(len(problems)) if i not in set(val)]
        return cls(problems, train, val, seed)


# ---------------------------------------------------------------- inverse kinematics

def solve_ik(model: PlanarArmModel, position, heading: float, elbow: float = 1.0):
    """Analytic IK for a 3-link chain at a given end-effector heading (``None`` if unreachable)."""
    if model.n != 3:
        raise GenerationError("generators assume a 3-link arm")
    l1, l2, l3 = model.link_lengths
    wx = position[0] - l3 * np.cos(heading)
    wy = position[1] - l3 * np.sin(heading)
    c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if abs(c2) > 1.0 - 1e-9:
        return None
    q2 = elbow * np.arccos(c2)
    q1 = np.arctan2(wy, wx) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q3 = heading - q1 - q2
    q = np.array([q1, q2, q3])
    return (q + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------- reach on a line

@dataclass(frozen=True)
class ReachGeometry:
    y_line: float = 0.4
    x_lo: float = -0.3
    x_hi: float = 0.5
    start_x: tuple = (-0.05, 0.05)
    target_margin: float = 0.05
    min_separation: float = 0.1
    heading_noise_start: float = 0.2
    heading_noise_goal: float = 0.3
    hit_speed_fraction: float = 0.5

    def bounds(self) -> dict:
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "y_line": self.y_line}


def default_alpha(task: str) -> np.ndarray:
    """Initial metric: equalising weights for the reach task, zeros for transfer."""
    if task == REACH:
        return np.log(np.array([1.0, 1.0, 1e-2, 1e-4]))
    return np.zeros(6)


def reach_constraints(geometry: ReachGeometry = ReachGeometry(), eta: float = 0.01) -> ConstraintSet:
    b = DEFAULT_BUDGETS
    return ConstraintSet([
        ConstraintTerm("surface", b["surface"], geometry.bounds()),
        ConstraintTerm("velocity", b["velocity"]),
        ConstraintTerm("acceleration", b["acceleration"]),
        ConstraintTerm("torque", b["torque"]),
    ], eta=eta)


def _hit_velocity(model, q, direction, fraction):
    J = jacobian(model, q)
    joint_dir = np.linalg.pinv(J) @ np.array([direction, 0.0])
    v_max = 1.0 / np.max(np.abs(joint_dir) / model.dq_limits)
    return fraction * v_max * joint_dir


def generate_reach_problems(count: int, seed: int, model: PlanarArmModel,
                            geometry: ReachGeometry = ReachGeometry(),
                            val_fraction: float = 0.0) -> Dataset:
    """Random reach-on-line problems; deterministic in ``seed``."""
    if count <= 0:
        raise GenerationError("count must be positive")
    rng = np.random.default_rng(seed)
    cset = reach_constraints(geometry)
    g = geometry
    problems = []
    for k in range(count):
        for _ in range(MAX_ATTEMPTS):
            x0 = rng.uniform(*g.start_x)
            xd = rng.uniform(g.x_lo + g.target_margin, g.x_hi - g.target_margin)
            h0 = np.pi / 2 + rng.uniform(-g.heading_noise_start, g.heading_noise_start)
            hd = np.pi / 2 + rng.uniform(-g.heading_noise_goal, g.heading_noise_goal)
            scale = rng.uniform() if rng.uniform() < 0.5 else 1.0
            if abs(xd - x0) < g.min_separation:
                continue
            q0 = solve_ik(model, (x0, g.y_line), h0)
            qd = solve_ik(model, (xd, g.y_line), hd)
            if q0 is None or qd is None:
                continue
            qd = q0 + (qd - q0 + np.pi) % (2 * np.pi) - np.pi
            dqd = _hit_velocity(model, qd, np.sign(xd - x0), g.hit_speed_fraction * scale)
            zeros = np.zeros(model.n)
            bc = BoundaryConditions(q0, zeros, zeros, qd, dqd)
            ok = all(surface_loss(model, q, g.bounds()) < 1e-12 for q in (q0, qd))
            if ok:
                problems.append(PlanningProblem(bc, REACH, {"kind": "line", **g.bounds()}, cset))
                break
        else:
            raise GenerationError(f"rejection limit exceeded for problem {k}")
    return Dataset.from_problems(problems, seed, val_fraction)


# ---------------------------------------------------------------- transfer between pedestals

@dataclass(frozen=True)
class TransferGeometry:
    start_x: tuple = (-0.55, -0.35)
    goal_x: tuple = (0.35, 0.55)
    ee_y: tuple = (-0.15, 0.1)
    pedestal_halfwidth: float = 0.15
    floor_y: float = -1.0
    object_size: tuple = (0.2, 0.1)  # (height along heading, width)
    heading: float = -np.pi / 2
    clearance: float = 0.15


def _object_corners(g: TransferGeometry):
    h, w = g.object_size
    return [[0.0, -w / 2], [0.0, w / 2], [h, w / 2], [h, -w / 2]]


def transfer_constraints(boxes, geometry: TransferGeometry = TransferGeometry()) -> ConstraintSet:
    return ConstraintSet([
        ConstraintTerm("velocity", 6e-3),
        ConstraintTerm("acceleration", 6e-2),
        ConstraintTerm("torque", 6e-2),
        ConstraintTerm("orientation", DEFAULT_BUDGETS["orientation"], {"heading": geometry.heading}),
        ConstraintTerm("robot_collision", DEFAULT_BUDGETS["robot_collision"],
                       {"boxes": boxes, "clearance": geometry.clearance, "spacing": 0.1}),
        ConstraintTerm("object_collision", DEFAULT_BUDGETS["object_collision"],
                       {"boxes": boxes, "corners": _object_corners(geometry)}),
    ], eta=0.0)


def generate_transfer_problems(count: int, seed: int, model: PlanarArmModel,
                               geometry: TransferGeometry = TransferGeometry(),
                               val_fraction: float = 0.0) -> Dataset:
    """Random pedestal-to-pedestal transfers with zero boundary velocities."""
    if count <= 0:
        raise GenerationError("count must be positive")
    rng = np.random.default_rng(seed)
    g = geometry
    h = g.object_size[0]
    problems = []
    for k in range(count):
        for _ in range(MAX_ATTEMPTS):
            x0, y0 = rng.uniform(*g.start_x), rng.uniform(*g.ee_y)
            xd, yd = rng.uniform(*g.goal_x), rng.uniform(*g.ee_y)
            boxes = [
                [x0 - g.pedestal_halfwidth, g.floor_y, x0 + g.pedestal_halfwidth, y0 - h],
                [xd - g.pedestal_halfwidth, g.floor_y, xd + g.pedestal_halfwidth, yd - h],
            ]
            q0 = _collision_free_ik(model, (x0, y0), boxes, g)
            qd = _collision_free_ik(model, (xd, yd), boxes, g)
            if q0 is None or qd is None:
                continue
            cset = transfer_constraints(boxes, g)
            zeros = np.zeros(model.n)
            bc = BoundaryConditions(q0, zeros, zeros, qd, zeros)
            geo = {"kind": "pedestals", "boxes": boxes, "heading": g.heading}
            problems.append(PlanningProblem(bc, TRANSFER, geo, cset))
            break
        else:
            raise GenerationError(f"rejection limit exceeded for problem {k}")
    return Dataset.from_problems(problems, seed, val_fraction)


def _collision_free_ik(model, position, boxes, g: TransferGeometry):
    for elbow in (1.0, -1.0):
        q = solve_ik(model, position, g.heading, elbow)
        if q is not None and _transfer_state_ok(model, q, boxes, g):
            return q
    return None


def _transfer_state_ok(model, q, boxes, g: TransferGeometry) -> bool:
    zeros = np.zeros(model.n)
    if robot_collision_loss(model, q, boxes, g.clearance) > 0:
        return False
    if orientation_loss(model, q, g.heading) > 1e-20:
        return False
    cx, cy = object_corner_xy(model, q, _object_corners(g))
    if object_collision_loss(np.stack([cx, cy], axis=-1), boxes) > 1e-20:
        return False
    return torque_loss(model, q, zeros, zeros) == 0.0
