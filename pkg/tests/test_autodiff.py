import numpy as np
import pytest

from kinoplan import autodiff as ad

from oracles import central_fd, rel_err


def check(f, x, tol=1e-6):
    _, g = ad.grad(f, x)
    fd = central_fd(lambda v: float(f(v)), x)
    for i, v in fd.items():
        assert rel_err(g.reshape(-1)[i] if g.ndim == 1 else g.flat[i], v, 1e-6) < tol, (i, g, v)


def test_elementwise_chain(rng):
    x = rng.uniform(0.2, 1.5, 6)
    check(lambda v: ad.sum_(ad.exp(v) * ad.sin(v) / (1.0 + ad.cos(v) ** 2) - ad.log(v) * ad.tanh(v)), x)
    check(lambda v: ad.sum_(ad.sqrt(v) * ad.abs_(v - 0.7) + ad.relu(v - 1.0) ** 2), x)


def test_matmul_getitem_and_broadcast(rng):
    A = rng.normal(size=(3, 4))
    x = rng.normal(size=8)

    def f(v):
        m = v.reshape(4, 2) if ad.is_tensor(v) else v.reshape(4, 2)
        y = A @ m + v[:2]
        z = ad.stack([y[:, 0], y[:, 1] * y[:, 0]], axis=-1)
        return ad.sum_(ad.concatenate([z, y[[0, 2]]], axis=0) ** 2)

    check(f, x)


def test_where_and_huber(rng):
    x = np.array([-3.0, -0.4, 0.3, 2.5])
    check(lambda v: ad.sum_(ad.huber(v, 1.0) + ad.where(ad.value(v) > 0, v * v, -v)), x)


def test_safe_norm_has_zero_gradient_at_origin():
    _, g = ad.grad(lambda v: ad.safe_norm(v[0], v[1]), np.zeros(2))
    assert np.array_equal(g, np.zeros(2))
    val, g = ad.grad(lambda v: ad.safe_norm(v[0], v[1]), np.array([3.0, 4.0]))
    assert val == 5.0 and np.allclose(g, [0.6, 0.8])


def test_numpy_passthrough():
    assert ad.exp(0.0) == 1.0
    assert isinstance(ad.sum_(np.ones(3)), (float, np.floating))


def test_gradient_accumulates_over_reuse():
    val, g = ad.grad(lambda v: v[0] * v[0] * v[0] + v[0], np.array([2.0]))
    assert val == 10.0 and g[0] == pytest.approx(13.0)
