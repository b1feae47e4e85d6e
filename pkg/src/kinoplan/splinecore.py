"""Clamped B-splines on the unit parameter domain.

Knots are always uniform-clamped: ``D+1`` zeros, ``C-D-1`` evenly spaced
interior values and ``D+1`` ones.  Derivatives come from the exact
derivative spline, never from finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "KnotVector", "SplineCurve", "make_clamped_knots", "basis_functions",
    "basis_row", "basis_matrix", "eval_curve",
]


class SplineError(ValueError):
    pass


@dataclass(frozen=True)
class KnotVector:
    knots: tuple
    degree: int
    num_ctrl: int

    def __post_init__(self):
        if len(self.knots) != self.num_ctrl + self.degree + 1:
            raise SplineError("knot count must equal num_ctrl + degree + 1")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)


def make_clamped_knots(C: int, D: int) -> KnotVector:
    """Uniform clamped knot vector for ``C`` control points of degree ``D``.

    >>> make_clamped_knots(5, 3).knots
    (0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0)
    """
    if D < 1:
        raise SplineError(f"degree must be >= 1, got {D}")
    if C < D + 1:
        raise SplineError(f"need at least degree+1={D + 1} control points, got {C}")
    interior = [j / (C - D) for j in range(1, C - D)]
    knots = [0.0] * (D + 1) + interior + [1.0] * (D + 1)
    return KnotVector(tuple(float(k) for k in knots), D, C)


def _find_span(k: np.ndarray, D: int, C: int, s: float) -> int:
    if s >= k[C]:
        return C - 1
    # right-continuous span: k[span] <= s < k[span+1]
    return int(np.searchsorted(k, s, side="right") - 1)


def _check_s(s):
    if not (0.0 <= s <= 1.0):
        raise SplineError(f"parameter s={s} outside [0, 1]")


def _basis_derivs(kv: KnotVector, s: float, order: int):
    """Nonzero basis values and derivatives up to ``order`` (de Boor / Piegl-Tiller A2.3)."""
    k = kv.array
    p = kv.degree
    span = _find_span(k, p, kv.num_ctrl, s)
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = s - k[span + 1 - j]
        right[j] = k[span + j] - s
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for kk in range(1, order + 1):
            d = 0.0
            rk, pk = r - kk, p - kk
            if r >= kk:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = kk - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, kk] = -a[s1, kk - 1] / ndu[pk + 1, r]
                d += a[s2, kk] * ndu[r, pk]
            ders[kk, r] = d
            s1, s2 = s2, s1
    fac = p
    for kk in range(1, order + 1):
        ders[kk] *= fac
        fac *= p - kk
    return span, ders


def basis_functions(kv: KnotVector, s: float) -> list:
    """Nonzero basis weights at ``s`` as ``[(index, weight), ...]``."""
    _check_s(s)
    span, ders = _basis_derivs(kv, s, 0)
    first = span - kv.degree
    return [(first + j, float(w)) for j, w in enumerate(ders[0]) if w != 0.0]


def basis_row(kv: KnotVector, s: float, order: int = 0) -> np.ndarray:
    """Dense length-``C`` row ``w`` with ``curve^(order)(s) = w @ control_points``."""
    _check_s(s)
    if order < 0 or order > kv.degree:
        raise SplineError(f"derivative order {order} not in [0, {kv.degree}]")
    span, ders = _basis_derivs(kv, s, order)
    row = np.zeros(kv.num_ctrl)
    row[span - kv.degree: span + 1] = ders[order]
    return row


@lru_cache(maxsize=64)
def _basis_matrix_cached(C: int, D: int, order: int, s_key: tuple) -> np.ndarray:
    kv = make_clamped_knots(C, D)
    out = np.stack([basis_row(kv, s, order) for s in s_key])
    out.flags.writeable = False
    return out


def basis_matrix(kv: KnotVector, s, order: int = 0) -> np.ndarray:
    """Stacked basis rows for a grid of parameters; cached per (C, D, order, grid)."""
    s_key = tuple(float(x) for x in np.atleast_1d(s))
    return _basis_matrix_cached(kv.num_ctrl, kv.degree, order, s_key)


@dataclass(frozen=True)
class SplineCurve:
    knots: KnotVector
    control_points: np.ndarray  # (C, m)

    def __post_init__(self):
        cps = np.asarray(self.control_points, dtype=float)
        if cps.ndim == 1:
            cps = cps[:, None]
        if cps.shape[0] != self.knots.num_ctrl:
            raise SplineError(
                f"{cps.shape[0]} control points for a knot vector expecting {self.knots.num_ctrl}")
        object.__setattr__(self, "control_points", cps)

    @classmethod
    def from_points(cls, control_points, degree: int) -> "SplineCurve":
        cps = np.asarray(control_points, dtype=float)
        return cls(make_clamped_knots(len(cps), degree), cps)

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def num_ctrl(self) -> int:
        return self.knots.num_ctrl

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def __call__(self, s, order: int = 0) -> np.ndarray:
        return eval_curve(self, s, order)

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "num_ctrl": self.num_ctrl,
            "control_points": self.control_points.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SplineCurve":
        cps = np.asarray(d["control_points"], dtype=float)
        if len(cps) != d["num_ctrl"]:
            raise SplineError("num_ctrl does not match control point list")
        return cls(make_clamped_knots(int(d["num_ctrl"]), int(d["degree"])), cps)


def eval_curve(c: SplineCurve, s: float, order: int = 0) -> np.ndarray:
    """Value of the ``order``-th derivative with respect to ``s``."""
    if order > c.degree:
        raise SplineError(f"derivative order {order} exceeds degree {c.degree}")
    return basis_row(c.knots, s, order) @ c.control_points
