"""Amortised planner: a feed-forward network mapping a boundary state to spline control points.

The trunk feeds two heads.  The configuration head emits offsets ``phi``
for the interior path control points; the time head emits the rate control
points through ``exp`` so they are always positive.  Boundary control
points are computed analytically, so every plan meets its boundary
conditions regardless of the weights.  Training needs no demonstrations:
the network minimises the same weighted trajectory loss as the direct
planner, averaged over a batch of problems.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .constraints import ConstraintSet, evaluate_terms, weighted_total
from .metricopt import ManifoldMetric, alpha_update
from .trajectory import (BoundaryConditions, Layout, PhaseTrajectory, TimeMap, boundary_constants,
                         make_trajectory, path_control_points, state_at_time)

log = logging.getLogger(__name__)

__all__ = [
    "PlannerNetwork", "TrainConfig", "EpochStats", "normalize_inputs", "forward", "plan",
    "batch_loss", "batch_gradient", "train_epoch", "train", "replan_from_time",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class PlannerNetwork:
    """Weights of the trunk and both heads as lists of ``(W, b)`` pairs."""

    n: int
    layout: Layout
    trunk: list
    config_head: list
    time_head: list
    step: int = 0

    @classmethod
    def init(cls, n: int, layout: Layout = Layout(), hidden: int = 128, seed: int = 0,
             trunk_layers: int = 2) -> "PlannerNetwork":
        rng = np.random.default_rng(seed)

        def dense(fan_in, fan_out):
            bound = 1.0 / math.sqrt(fan_in)
            return [rng.uniform(-bound, bound, (fan_in, fan_out)),
                    rng.uniform(-bound, bound, fan_out)]

        widths = [5 * n] + [hidden] * trunk_layers
        trunk = [dense(a, b) for a, b in zip(widths[:-1], widths[1:])]
        config = [dense(hidden, hidden), dense(hidden, layout.n_free * n)]
        time = [dense(hidden, hidden), dense(hidden, layout.C_r)]
        return cls(n, layout, trunk, config, time)

    @classmethod
    def zeros(cls, n: int, layout: Layout = Layout(), hidden: int = 128) -> "PlannerNetwork":
        net = cls.init(n, layout, hidden)
        for layer in net.layers():
            layer[0][...] = 0.0
            layer[1][...] = 0.0
        return net

    def layers(self) -> list:
        return self.trunk + self.config_head + self.time_head

    def parameters(self) -> list:
        return [a for layer in self.layers() for a in layer]

    def set_parameters(self, arrays) -> None:
        it = iter(arrays)
        for layer in self.layers():
            layer[0] = np.array(next(it), dtype=float)
            layer[1] = np.array(next(it), dtype=float)

    def copy(self) -> "PlannerNetwork":
        c = PlannerNetwork(self.n, self.layout, [], [], [], self.step)
        c.trunk = [[w.copy(), b.copy()] for w, b in self.trunk]
        c.config_head = [[w.copy(), b.copy()] for w, b in self.config_head]
        c.time_head = [[w.copy(), b.copy()] for w, b in self.time_head]
        return c

    def to_json(self, metric: ManifoldMetric | None = None) -> dict:
        def pack(layers):
            return [{"shape": list(w.shape), "weights": w.reshape(-1).tolist(), "bias": b.tolist()}
                    for w, b in layers]

        lay = self.layout
        return {
            "n": self.n,
            "layout": {"C_p": lay.C_p, "D_p": lay.D_p, "C_r": lay.C_r, "D_r": lay.D_r},
            "trunk": pack(self.trunk),
            "config_head": pack(self.config_head),
            "time_head": pack(self.time_head),
            "alpha": None if metric is None else metric.alpha.tolist(),
            "gamma": None if metric is None else metric.gamma,
            "step": self.step,
        }

    @classmethod
    def from_json(cls, d: dict):
        def unpack(layers):
            return [[np.asarray(l["weights"], float).reshape(l["shape"]), np.asarray(l["bias"], float)]
                    for l in layers]

        net = cls(int(d["n"]), Layout(**d["layout"]), unpack(d["trunk"]),
                  unpack(d["config_head"]), unpack(d["time_head"]), int(d.get("step", 0)))
        metric = None
        if d.get("alpha") is not None:
            metric = ManifoldMetric(d["alpha"], d.get("gamma") or 1e-2)
        return net, metric

    def save(self, path, metric: ManifoldMetric | None = None) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(metric), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 128
    epochs: int = 1
    N: int = 100
    gamma: float = 1e-2
    optimizer: str = "adam"  # "adam" or "sgd"
    seed: int = 0
    budget_margin: float = 0.3  # batch-mean losses are driven to this fraction of each budget

    def __post_init__(self):
        if self.lr < 0 or self.batch_size <= 0 or self.epochs <= 0 or self.N < 16:
            raise TrainingError("invalid training configuration")
        if not 0 < self.budget_margin <= 1:
            raise TrainingError("budget_margin must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_terms: np.ndarray
    val_loss: float | None
    val_terms: np.ndarray | None
    alpha: np.ndarray

    def row(self) -> dict:
        out = {"epoch": self.epoch, "train_loss": self.train_loss}
        out.update({f"train_L{i}": float(v) for i, v in enumerate(self.train_terms)})
        if self.val_terms is not None:
            out["val_loss"] = self.val_loss
            out.update({f"val_L{i}": float(v) for i, v in enumerate(self.val_terms)})
        out.update({f"alpha{i}": float(v) for i, v in enumerate(self.alpha)})
        return out


# ---------------------------------------------------------------- inference

def normalize_inputs(problem, model) -> np.ndarray:
    """Feature vector ``[q0, qd, dq0, dqd, ddq0]`` scaled per joint."""
    bc = problem.bc if hasattr(problem, "bc") else problem
    if bc.n != model.n:
        raise TrainingError("problem and model disagree on joint count")
    return np.concatenate([bc.q0 / model.q_scale, bc.qd / model.q_scale,
                           bc.dq0 / model.dq_limits, bc.dqd / model.dq_limits,
                           bc.ddq0 / model.ddq_limits])


def forward(net: PlannerNetwork, features, params=None):
    """(phi, rate control points) for features of shape (5n,) or (B, 5n).

    ``params`` optionally overrides the stored weights with tensors, flat in
    :meth:`PlannerNetwork.parameters` order.
    """
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != 5 * net.n:
        raise TrainingError(f"expected {5 * net.n} features, got {x.shape[-1]}")
    weights = net.parameters() if params is None else list(params)
    it = iter(weights)
    layers = [(next(it), next(it)) for _ in range(len(net.layers()))]
    nt, nc = len(net.trunk), len(net.config_head)

    h = x
    for W, b in layers[:nt]:
        h = ad.tanh(h @ W + b)
    c = h
    for W, b in layers[nt:nt + nc - 1]:
        c = ad.tanh(c @ W + b)
    W, b = layers[nt + nc - 1]
    phi = c @ W + b
    t = h
    for W, b in layers[nt + nc:-1]:
        t = ad.tanh(t @ W + b)
    W, b = layers[-1]
    rate = ad.exp(t @ W + b)

    phi = phi.reshape(x.shape[0], net.layout.n_free, net.n)
    if single:
        return phi[0], rate[0]
    return phi, rate


def plan(net: PlannerNetwork, problem, model) -> PhaseTrajectory:
    """One forward pass plus the analytic boundary control points."""
    phi, rate = forward(net, normalize_inputs(problem, model))
    return make_trajectory(problem.bc, rate, phi, net.layout, free_is_offset=True)


# ---------------------------------------------------------------- training

def _bc_arrays(problems):
    return tuple(np.stack([getattr(p.bc, k) for p in problems])
                 for k in ("q0", "dq0", "ddq0", "qd", "dqd"))


def batch_loss(net: PlannerNetwork, problems, model, terms: ConstraintSet, alpha, N: int,
               params=None):
    """Mean weighted loss over ``problems`` plus per-problem task and term losses."""
    feats = np.stack([normalize_inputs(p, model) for p in problems])
    phi, R = forward(net, feats, params)
    consts = boundary_constants(net.layout)
    P = path_control_points(_bc_arrays(problems), R, phi, consts, net.layout.C_p, free_is_offset=True)
    task, per = evaluate_terms(P, R, model, terms, net.layout, N)
    total = ad.sum_(weighted_total(task, per, alpha)) * (1.0 / len(problems))
    return total, task, per


def batch_gradient(net: PlannerNetwork, problems, model, terms: ConstraintSet, alpha, N: int):
    """(mean weighted loss, gradients in :meth:`PlannerNetwork.parameters` order, per-term losses)."""
    params = [ad.Tensor(a) for a in net.parameters()]
    total, task, per = batch_loss(net, problems, model, terms, alpha, N, params)
    total.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
    return float(total.value), grads, ad.value(per)


class _Adam:
    def __init__(self, shapes, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1 ** self.t)
            vh = self.v[i] / (1 - self.b2 ** self.t)
            out.append(p - lr * mh / (np.sqrt(vh) + self.eps))
        return out


def _evaluate(net, problems, model, terms, metric, N, batch=256):
    tot, per_sum, count = 0.0, None, 0
    for i in range(0, len(problems), batch):
        chunk = problems[i:i + batch]
        total, _, per = batch_loss(net, chunk, model, terms, metric.alpha, N)
        tot += float(total) * len(chunk)
        s = np.sum(per, axis=0)
        per_sum = s if per_sum is None else per_sum + s
        count += len(chunk)
    return tot / count, per_sum / count


def train_epoch(net: PlannerNetwork, dataset, model, terms: ConstraintSet, metric: ManifoldMetric,
                cfg: TrainConfig, epoch: int = 0, optimizer_state=None):
    """One pass over the training split; returns ``(net, metric, stats)``.

    ``optimizer_state`` (from a previous call, via ``stats.optimizer_state``)
    carries Adam moments across epochs.  Raises :class:`TrainingError` on a
    non-finite loss.
    """
    train = dataset.train
    if not train:
        raise TrainingError("empty training split")
    rng = np.random.default_rng((cfg.seed, epoch))
    order = rng.permutation(len(train))
    opt = optimizer_state
    if opt is None and cfg.optimizer == "adam":
        opt = _Adam([p.shape for p in net.parameters()])
    budgets = terms.budgets * cfg.budget_margin
    losses, per_means = [], []
    for start in range(0, len(order), cfg.batch_size):
        batch = [train[i] for i in order[start:start + cfg.batch_size]]
        total, grads, per = batch_gradient(net, batch, model, terms, metric.alpha, cfg.N)
        if not (np.isfinite(total) and all(np.all(np.isfinite(g)) for g in grads)):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}: "
                                f"total={total}, alpha={metric.alpha.tolist()}")
        if cfg.lr > 0:
            params = net.parameters()
            if cfg.optimizer == "adam":
                new = opt.step(params, grads, cfg.lr)
            else:
                new = [p - cfg.lr * g for p, g in zip(params, grads)]
            net.set_parameters(new)
        net.step += 1
        per_mean = np.mean(per, axis=0)
        metric = alpha_update(metric, per_mean, budgets)
        losses.append(total)
        per_means.append(per_mean)
    val_loss = val_terms = None
    if len(dataset.val_idx):
        val_loss, val_terms = _evaluate(net, dataset.val, model, terms, metric, cfg.N)
    stats = EpochStats(epoch, float(np.mean(losses)), np.mean(per_means, axis=0), val_loss,
                       val_terms, metric.alpha.copy())
    stats.optimizer_state = opt
    return net, metric, stats


def train(net: PlannerNetwork, dataset, model, terms: ConstraintSet, metric: ManifoldMetric,
          cfg: TrainConfig, callback=None):
    """Run ``cfg.epochs`` epochs; returns ``(net, metric, [EpochStats, ...])``."""
    history = []
    opt = None
    for epoch in range(cfg.epochs):
        net, metric, stats = train_epoch(net, dataset, model, terms, metric, cfg, epoch, opt)
        opt = stats.optimizer_state
        history.append(stats)
        log.info("epoch %d loss %.6g terms %s", epoch, stats.train_loss, stats.train_terms)
        if callback is not None:
            callback(stats)
    return net, metric, history


# ---------------------------------------------------------------- replanning

def replan_from_time(net: PlannerNetwork, current: PhaseTrajectory, tm: TimeMap, t_switch: float,
                     new_goal, model, problem=None):
    """Plan from the state the current trajectory reaches at ``t_switch``.

    ``new_goal`` is ``(qd, dqd)``.  Returns ``(trajectory, new_problem)``;
    the new trajectory starts exactly in the predicted state.
    """
    if not (0.0 <= t_switch <= tm.T):
        raise TrainingError(f"t_switch={t_switch} outside [0, {tm.T}]")
    q, dq, ddq = state_at_time(current, tm, t_switch)
    qd, dqd = new_goal
    bc = BoundaryConditions(q, dq, ddq, qd, dqd)
    if problem is None:
        from types import SimpleNamespace
        new_problem = SimpleNamespace(bc=bc)
    else:
        new_problem = problem.with_bc(bc)
    return plan(net, new_problem, model), new_problem
