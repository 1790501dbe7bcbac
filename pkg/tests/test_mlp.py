"""Network forward/backward checked against finite differences."""

import numpy as np
import pytest

from flowmapctl.mlp import Adam, DimensionError, Mlp, finite_difference_gradients


def test_zero_network_outputs_zero():
    net = Mlp.zeros([5, 4, 2])
    x = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(net.forward(x), np.zeros(2))


def test_single_linear_identity_layer():
    net = Mlp([3, 3], [np.eye(3)], [np.zeros(3)])
    x = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(net.forward(x), x)


def test_dimension_mismatch_rejected():
    net = Mlp.zeros([5, 4, 2])
    with pytest.raises(DimensionError):
        net.forward(np.zeros(6))
    with pytest.raises(DimensionError):
        Mlp([3, 2], [np.zeros((3, 2))], [np.zeros(3)])


def test_batched_equals_single():
    # BLAS may pick different kernels by shape, so equality is to rounding.
    rng = np.random.default_rng(1)
    net = Mlp.init([6, 8, 8, 2], rng)
    xs = rng.normal(size=(10, 6))
    batched = net.forward(xs)
    for i in range(10):
        assert np.allclose(batched[i], net.forward(xs[i]), rtol=1e-13, atol=1e-14)


def test_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    for trial in range(20):
        widths = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(2, 5)))]
        widths = [int(rng.integers(2, 7))] + widths + [int(rng.integers(1, 4))]
        net = Mlp.init(widths, rng)
        x = rng.normal(size=(3, widths[0]))
        target = rng.normal(size=(3, widths[-1]))

        def loss():
            y = net.forward(x)
            return float(np.sum((y - target) ** 2))

        y, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, 2.0 * (y - target))
        fd = finite_difference_gradients(loss, net.params())
        for g, g_fd in zip(grads, fd):
            scale = max(1.0, float(np.max(np.abs(g_fd))))
            assert np.max(np.abs(g - g_fd)) / scale < 1e-5, f"trial {trial}"


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    net = Mlp.init([5, 7, 2], rng)
    x = rng.normal(size=(1, 5))

    y, cache = net.forward_cached(x)
    _, g_in = net.backward(cache, np.ones((1, 2)))
    h = 1e-6
    for i in range(5):
        xp = x.copy()
        xp[0, i] += h
        xm = x.copy()
        xm[0, i] -= h
        fd = (np.sum(net.forward(xp)) - np.sum(net.forward(xm))) / (2 * h)
        assert abs(g_in[0, i] - fd) < 1e-7


def test_adam_decayed_rate_schedule():
    p = [np.array([0.0])]
    opt = Adam(p, lr=0.1, lr_decay=0.5)
    assert opt.current_lr() == 0.1
    opt.step(p, [np.array([1.0])])
    assert opt.current_lr() == 0.05
    opt.step(p, [np.array([1.0])])
    assert opt.current_lr() == 0.025


def test_adam_descends_quadratic():
    rng = np.random.default_rng(4)
    p = [rng.normal(size=(3, 3)), rng.normal(size=3)]
    opt = Adam(p, lr=0.05)
    for _ in range(500):
        grads = [2.0 * p[0], 2.0 * p[1]]
        opt.step(p, grads)
    assert np.max(np.abs(p[0])) < 1e-3
    assert np.max(np.abs(p[1])) < 1e-3


def test_zero_lr_is_noop():
    rng = np.random.default_rng(5)
    net = Mlp.init([4, 6, 2], rng)
    before = [q.copy() for q in net.params()]
    opt = Adam(net.params(), lr=0.0)
    opt.step(net.params(), [np.ones_like(q) for q in net.params()])
    for b, a in zip(before, net.params()):
        assert np.array_equal(b, a)
