"""Planar serial arm: kinematics and recursive Newton-Euler dynamics.

All state functions broadcast over leading axes (``q`` of shape ``(..., n)``)
and accept :class:`kinoplan.autodiff.Tensor` inputs, so the same code is
used for evaluation and for exact loss gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "PlanarArmModel", "EeState", "default_model", "forward_kinematics", "chain_points",
    "inverse_dynamics", "ee_kinematics", "ee_curvature_speed", "jacobian",
]

CURVATURE_EPS = 1e-8


class ModelError(ValueError):
    pass


def _vec(x, n, name):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ModelError(f"{name} must have {n} entries, got {a.shape[0]}")
    return a


@dataclass(frozen=True)
class PlanarArmModel:
    link_lengths: np.ndarray
    link_masses: np.ndarray
    link_com: np.ndarray
    link_inertias: np.ndarray
    dq_limits: np.ndarray
    ddq_limits: np.ndarray
    tau_limits: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    q_scale: np.ndarray | None = None  # input normalisation for the network; defaults to pi

    def __post_init__(self):
        n = len(np.atleast_1d(self.link_lengths))
        for name in ("link_lengths", "link_masses", "link_com", "link_inertias",
                     "dq_limits", "ddq_limits", "tau_limits"):
            a = _vec(getattr(self, name), n, name)
            if name in ("link_com", "link_inertias"):
                if np.any(a < 0):
                    raise ModelError(f"{name} must be non-negative")
            elif np.any(a <= 0):
                raise ModelError(f"{name} must be positive")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "gravity", _vec(self.gravity, 2, "gravity"))
        qs = np.full(n, np.pi) if self.q_scale is None else _vec(self.q_scale, n, "q_scale")
        object.__setattr__(self, "q_scale", qs)

    @property
    def n(self) -> int:
        return len(self.link_lengths)

    def to_json(self) -> dict:
        return {
            "links": [
                {"length": float(l), "mass": float(m), "com": float(c), "inertia": float(i)}
                for l, m, c, i in zip(self.link_lengths, self.link_masses,
                                      self.link_com, self.link_inertias)
            ],
            "gravity": self.gravity.tolist(),
            "limits": {
                "dq": self.dq_limits.tolist(),
                "ddq": self.ddq_limits.tolist(),
                "tau": self.tau_limits.tolist(),
            },
            "q_scale": self.q_scale.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PlanarArmModel":
        links = d["links"]
        lim = d["limits"]
        return cls(
            link_lengths=[l["length"] for l in links],
            link_masses=[l["mass"] for l in links],
            link_com=[l["com"] for l in links],
            link_inertias=[l["inertia"] for l in links],
            gravity=d.get("gravity", [0.0, 0.0]),
            dq_limits=lim["dq"], ddq_limits=lim["ddq"], tau_limits=lim["tau"],
            q_scale=d.get("q_scale"),
        )


def default_model() -> PlanarArmModel:
    """3-link table-plane arm used by the benchmarks (zero gravity)."""
    lengths = np.array([0.4, 0.4, 0.2])
    masses = np.ones(3)
    return PlanarArmModel(
        link_lengths=lengths,
        link_masses=masses,
        link_com=lengths / 2,
        link_inertias=masses * lengths**2 / 12,
        dq_limits=np.array([2.0, 2.0, 2.5]),
        ddq_limits=np.array([10.0, 10.0, 12.0]),
        tau_limits=np.array([5.0, 3.0, 1.5]),
    )


@dataclass
class EeState:
    position: np.ndarray
    heading: float
    joints: np.ndarray  # (n+1, 2), base first


def _check_dim(model, *vecs):
    for v in vecs:
        if ad.value(v).shape[-1] != model.n:
            raise ModelError(f"state dimension {ad.value(v).shape[-1]} != {model.n}")


def _cumsum(x, n):
    # cumulative sum over the last axis, differentiable
    upper = np.triu(np.ones((n, n)))
    v = ad.value(x)
    if v.ndim == 1:
        return (x[None, :] @ upper)[0] if ad.is_tensor(x) else v @ upper
    return x @ upper


def _angles(model, q):
    return _cumsum(q, model.n)


def _joint_xy(model, q):
    """Joint positions excluding the base, each of shape (..., n)."""
    th = _angles(model, q)
    lc = model.link_lengths * ad.cos(th)
    ls = model.link_lengths * ad.sin(th)
    return _cumsum(lc, model.n), _cumsum(ls, model.n), th


def ee_position(model, q):
    """End-effector (x, y) and heading, broadcasting over leading axes."""
    x, y, th = _joint_xy(model, q)
    return x[..., -1], y[..., -1], th[..., -1]


def forward_kinematics(model: PlanarArmModel, q) -> EeState:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ModelError(f"expected q of shape ({model.n},), got {q.shape}")
    x, y, th = _joint_xy(model, q)
    joints = np.vstack([[0.0, 0.0], np.stack([x, y], axis=-1)])
    return EeState(position=joints[-1].copy(), heading=float(th[-1]), joints=joints)


def jacobian(model: PlanarArmModel, q) -> np.ndarray:
    """2 x n positional Jacobian of the end effector."""
    q = np.asarray(q, dtype=float)
    th = np.cumsum(q)
    l = model.link_lengths
    # column j: sum over links k >= j
    sx = -np.cumsum((l * np.sin(th))[::-1])[::-1]
    cx = np.cumsum((l * np.cos(th))[::-1])[::-1]
    return np.vstack([sx, cx])


def chain_point_weights(model: PlanarArmModel, spacing: float):
    """Per-link interpolation fractions so consecutive chain points are <= spacing apart."""
    if spacing <= 0:
        raise ModelError("spacing must be positive")
    out = []
    for l in model.link_lengths:
        k = int(np.ceil(l / spacing - 1e-12))
        out.append(np.arange(1, k + 1) / k)
    return out


def chain_points_xy(model, q, spacing):
    """Chain sample points as (px, py) arrays of shape (..., P); base included."""
    x, y, _ = _joint_xy(model, q)
    shape = ad.value(x).shape[:-1]
    zeros = np.zeros(shape + (1,))
    xs = ad.concatenate([zeros, x], axis=-1)
    ys = ad.concatenate([zeros, y], axis=-1)
    px, py = [xs[..., 0:1]], [ys[..., 0:1]]
    for i, fr in enumerate(chain_point_weights(model, spacing)):
        x0, x1 = xs[..., i:i + 1], xs[..., i + 1:i + 2]
        y0, y1 = ys[..., i:i + 1], ys[..., i + 1:i + 2]
        px.append(x0 + (x1 - x0) * fr)
        py.append(y0 + (y1 - y0) * fr)
    return ad.concatenate(px, axis=-1), ad.concatenate(py, axis=-1)


def chain_points(model: PlanarArmModel, q, spacing: float = 0.1) -> np.ndarray:
    """Joint positions plus linear interpolants, shape (P, 2)."""
    px, py = chain_points_xy(model, np.asarray(q, dtype=float), spacing)
    return np.stack([px, py], axis=-1)


def _cross_z(w, r):
    # (0, 0, w) x (rx, ry, 0)
    return -w * r[1], w * r[0]


def inverse_dynamics(model: PlanarArmModel, q, dq, ddq):
    """Joint torques by recursive Newton-Euler (world-frame planar form)."""
    _check_dim(model, q, dq, ddq)
    n = model.n
    th = _angles(model, q)
    w = _angles(model, dq)
    a = _angles(model, ddq)
    l, m, lc, inertia = model.link_lengths, model.link_masses, model.link_com, model.link_inertias
    shape = ad.value(th).shape[:-1]

    # forward pass: origin acceleration of each link, gravity folded in as base acceleration
    acc = [np.full(shape, -model.gravity[0]), np.full(shape, -model.gravity[1])]
    f_com, n_com, arms, arms_c = [], [], [], []
    for i in range(n):
        c, s = ad.cos(th[..., i]), ad.sin(th[..., i])
        wi, ai = w[..., i], a[..., i]
        r = (l[i] * c, l[i] * s)
        rc = (lc[i] * c, lc[i] * s)
        tx, ty = _cross_z(ai, rc)
        ac = (acc[0] + tx - wi * wi * rc[0], acc[1] + ty - wi * wi * rc[1])
        f_com.append((m[i] * ac[0], m[i] * ac[1]))
        n_com.append(inertia[i] * ai)
        arms.append(r)
        arms_c.append(rc)
        tx, ty = _cross_z(ai, r)
        acc = [acc[0] + tx - wi * wi * r[0], acc[1] + ty - wi * wi * r[1]]

    # backward pass: force and moment about each joint
    fx = fy = 0.0
    moment = 0.0
    taus = [None] * n
    for i in reversed(range(n)):
        rc, r = arms_c[i], arms[i]
        moment = (n_com[i] + rc[0] * f_com[i][1] - rc[1] * f_com[i][0]
                  + moment + r[0] * fy - r[1] * fx)
        fx = f_com[i][0] + fx
        fy = f_com[i][1] + fy
        taus[i] = moment
    return ad.stack(taus, axis=-1)


def ee_kinematics(model, q, dq, ddq):
    """End-effector velocity and acceleration components (vx, vy, ax, ay).

    Uses the closed-form planar chain derivatives, i.e. ``J dq`` and
    ``J ddq + Jdot dq`` without forming the Jacobians.
    """
    th = _angles(model, q)
    w = _angles(model, dq)
    a = _angles(model, ddq)
    l = model.link_lengths
    c, s = ad.cos(th), ad.sin(th)
    vx = ad.sum_(-l * s * w, axis=-1)
    vy = ad.sum_(l * c * w, axis=-1)
    ax = ad.sum_(-l * (c * w * w + s * a), axis=-1)
    ay = ad.sum_(l * (c * a - s * w * w), axis=-1)
    return vx, vy, ax, ay


def curvature_speed_terms(model, q, dq, ddq):
    vx, vy, ax, ay = ee_kinematics(model, q, dq, ddq)
    speed = ad.safe_norm(vx, vy)
    cross = ad.abs_(vx * ay - vy * ax)
    kappa = cross / (speed * speed * speed + CURVATURE_EPS)
    return kappa, speed


def ee_curvature_speed(model: PlanarArmModel, q, dq, ddq):
    """(curvature 1/m, speed m/s) of the end-effector path at this state."""
    _check_dim(model, q, dq, ddq)
    kappa, speed = curvature_speed_terms(model, np.asarray(q, float), np.asarray(dq, float),
                                         np.asarray(ddq, float))
    return float(kappa), float(speed)
