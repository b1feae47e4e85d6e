"""Minimal array-valued reverse-mode differentiation.

Every function here accepts plain numpy arrays or :class:`Tensor` objects.
With numpy inputs they return numpy results and record nothing, so the same
loss code serves plain evaluation and gradient evaluation.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "const", "value", "is_tensor", "exp", "log", "tanh", "sin", "cos",
    "sqrt", "abs_", "relu", "where", "stack", "concatenate", "matmul",
    "sum_", "safe_norm", "huber", "grad",
]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _is_basic_index(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in idx)


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor({self.value!r})"

    def __len__(self):
        return len(self.value)

    # arithmetic
    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _binary(other, self, np.divide, lambda g, a, b: (g / b, -g * a / (b * b)))

    def __neg__(self):
        return Tensor(-self.value, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        v = self.value
        return Tensor(v ** p, (self,), lambda g: (g * p * v ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        shape = self.value.shape
        basic = _is_basic_index(idx)

        def back(g):
            out = np.zeros(shape)
            if basic:
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.value[idx], (self,), back)

    def reshape(self, *shape):
        old = self.value.shape
        return Tensor(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return Tensor(self.value.T, (self,), lambda g: (g.T,))

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every upstream node."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=float)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for p, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=float), p.value.shape)
                p.grad = g if p.grad is None else p.grad + g


def is_tensor(x):
    return isinstance(x, Tensor)


def const(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _binary(a, b, op, back):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    av, bv = value(a), value(b)
    out = op(av, bv)
    if not (ta or tb):
        return out
    parents = []
    if ta:
        parents.append(a)
    if tb:
        parents.append(b)

    def backward(g):
        ga, gb = back(g, av, bv)
        res = []
        if ta:
            res.append(ga)
        if tb:
            res.append(gb)
        return res

    return Tensor(out, tuple(parents), backward)


def _unary(x, f, df):
    if not isinstance(x, Tensor):
        return f(np.asarray(x, dtype=float))
    v = x.value
    out = f(v)
    return Tensor(out, (x,), lambda g: (g * df(v, out),))


def exp(x):
    return _unary(x, np.exp, lambda v, o: o)


def log(x):
    return _unary(x, np.log, lambda v, o: 1.0 / v)


def tanh(x):
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o)


def sin(x):
    return _unary(x, np.sin, lambda v, o: np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda v, o: -np.sin(v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, o: 0.5 / o)


def abs_(x):
    return _unary(x, np.abs, lambda v, o: np.sign(v))


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(float))


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    return _binary(a, b, lambda x, y: np.where(cond, x, y),
                   lambda g, x, y: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), back)


def stack(items, axis=0):
    items = list(items)
    vals = [value(t) for t in items]
    out = np.stack(vals, axis=axis)
    if not any(isinstance(t, Tensor) for t in items):
        return out
    ax = axis if axis >= 0 else out.ndim + axis
    parents = tuple(t for t in items if isinstance(t, Tensor))
    which = [i for i, t in enumerate(items) if isinstance(t, Tensor)]

    def back(g):
        return [np.take(g, i, axis=ax) for i in which]

    return Tensor(out, parents, back)


def concatenate(items, axis=0):
    items = list(items)
    vals = [value(t) for t in items]
    out = np.concatenate(vals, axis=axis)
    if not any(isinstance(t, Tensor) for t in items):
        return out
    ax = axis if axis >= 0 else out.ndim + axis
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
    parents = tuple(t for t in items if isinstance(t, Tensor))
    which = [i for i, t in enumerate(items) if isinstance(t, Tensor)]

    def back(g):
        sl = [slice(None)] * g.ndim
        res = []
        for i in which:
            sl[ax] = slice(bounds[i], bounds[i + 1])
            res.append(g[tuple(sl)])
        return res

    return Tensor(out, parents, back)


def matmul(a, b):
    """``a @ b`` for operands with ndim >= 2 (batch dims broadcast)."""
    av, bv = value(a), value(b)
    out = av @ bv
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return out
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        res = []
        if ta:
            res.append(g @ np.swapaxes(bv, -1, -2))
        if tb:
            res.append(np.swapaxes(av, -1, -2) @ g)
        return res

    return Tensor(out, tuple(t for t in (a, b) if isinstance(t, Tensor)), backward)


def safe_norm(x, y):
    """sqrt(x^2 + y^2) with a zero (sub)gradient at the origin."""
    sq = x * x + y * y
    sqv = value(sq)
    zero = sqv <= 0.0
    safe = where(zero, np.ones_like(sqv), sq)
    return where(zero, np.zeros_like(sqv), sqrt(safe))


def huber(x, delta=1.0):
    ax = abs_(x)
    quad = 0.5 * x * x
    lin = delta * (ax - 0.5 * delta)
    return where(value(ax) <= delta, quad, lin)


def grad(f, x):
    """Value and gradient of scalar ``f`` at numpy array ``x``."""
    t = Tensor(np.array(x, dtype=float))
    out = f(t)
    if not isinstance(out, Tensor):
        return float(out), np.zeros_like(t.value)
    out.backward()
    g = t.grad if t.grad is not None else np.zeros_like(t.value)
    return float(out.value), g
