import numpy as np
import pytest

from marlflow.approx import (CHECKPOINT_VERSION, GradientSet, OptimizerState, Tabular, apply_update, backward,
                             clip_by_norm, forward, init_params, net_from_arrays, net_to_arrays)
from marlflow.errors import ConfigurationError, NumericError, ShapeError
from oracles import central_diff, mlp_forward_loops, rel_error

SHAPES = [[3, 4, 2], [5, 8, 8, 3], [2, 6, 1], [4, 3, 5, 4, 2]]


def test_forward_matches_scalar_loops():
    rng = np.random.default_rng(0)
    for sizes in SHAPES:
        net = init_params(sizes, rng)
        for b in net.biases:
            b[:] = rng.normal(size=b.shape)
        x = rng.normal(size=sizes[0])
        np.testing.assert_allclose(forward(net, x), mlp_forward_loops(net.weights, net.biases, x), atol=1e-12)


def test_batch_forward_equals_rowwise():
    net = init_params([3, 5, 2], 1)
    x = np.random.default_rng(2).normal(size=(7, 3))
    np.testing.assert_allclose(forward(net, x), np.stack([forward(net, r) for r in x]))


@pytest.mark.parametrize("sizes", SHAPES)
def test_backward_matches_finite_differences(sizes):
    rng = np.random.default_rng(sum(sizes))
    net = init_params(sizes, rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(3, sizes[0]))
    up = rng.normal(size=(3, sizes[-1]))

    def loss():
        return float(np.sum(up * forward(net, x)))

    g = backward(net, x, up)
    for (name, p), (_, gp) in zip(net.named_params(), g.named()):
        assert rel_error(gp, central_diff(loss, p)) < 1e-5, name
    assert rel_error(g.x, central_diff(loss, x)) < 1e-5


def test_backward_rejects_bad_upstream():
    net = init_params([2, 3, 2], 0)
    with pytest.raises(ShapeError):
        backward(net, np.zeros((4, 2)), np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        forward(net, np.zeros(5))


def test_init_rejects_bad_sizes():
    with pytest.raises(ConfigurationError):
        init_params([3], 0)
    with pytest.raises(ConfigurationError):
        init_params([3, 0, 2], 0)


def test_zero_init_and_out_scale():
    assert all(np.all(w == 0) for w in init_params([3, 4, 2], 0, zero=True).weights)
    a, b = init_params([3, 4, 2], 5), init_params([3, 4, 2], 5, out_scale=0.01)
    np.testing.assert_allclose(b.weights[-1], 0.01 * a.weights[-1])
    np.testing.assert_array_equal(a.weights[0], b.weights[0])


def test_sgd_step_is_plain_descent():
    net = init_params([2, 3, 1], 0)
    before = net.copy()
    g = backward(net, np.ones(2), np.ones(1))
    apply_update(net, g, OptimizerState("sgd", lr=0.1))
    for (_, p), (_, p0), (_, gp) in zip(net.named_params(), before.named_params(), g.named()):
        np.testing.assert_allclose(p, p0 - 0.1 * gp)


def test_adam_matches_hand_rolled_reference():
    rng = np.random.default_rng(3)
    net = init_params([2, 2], 0)
    w = net.weights[0].copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    opt = OptimizerState("adam", lr=0.01)
    for t in range(1, 6):
        gw = rng.normal(size=w.shape)
        grads = GradientSet([gw], [np.zeros(2)])
        apply_update(net, grads, opt)
        m = 0.9 * m + 0.1 * gw
        v = 0.999 * v + 0.001 * gw ** 2
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(net.weights[0], w, rtol=1e-12)


def test_non_finite_gradient_names_tensor():
    net = init_params([2, 3, 1], 0)
    g = backward(net, np.ones(2), np.ones(1))
    g.biases[1][0] = np.nan
    with pytest.raises(NumericError, match="b1"):
        apply_update(net, g, OptimizerState())


def test_optimizer_rejects_bad_settings():
    with pytest.raises(ConfigurationError):
        OptimizerState("rmsprop")
    with pytest.raises(ConfigurationError):
        OptimizerState("sgd", lr=0.0)


def test_clip_by_norm():
    g = GradientSet([np.full((2, 2), 3.0)], [np.full(2, 4.0)])
    clipped = clip_by_norm(g, 1.0)
    assert clipped.norm() == pytest.approx(1.0)
    assert clip_by_norm(g, 100.0) is g


def test_tabular_reads_zero_and_descends():
    tab = Tabular(3)
    x = np.array([0.5, 1.0])
    np.testing.assert_array_equal(tab.forward(x), np.zeros(3))
    grads = tab.backward(np.stack([x, x]), np.array([[1.0, 0, 0], [1.0, 0, 0]]))
    tab.apply_update(grads, 0.25)
    np.testing.assert_allclose(tab.forward(x), [-0.5, 0, 0])
    with pytest.raises(NumericError):
        tab.apply_update({tab.key(x): np.array([np.inf, 0, 0])}, 0.1)


def test_array_round_trip_restores_net_and_optimizer():
    net = init_params([3, 4, 2], 7)
    opt = OptimizerState()
    apply_update(net, backward(net, np.ones(3), np.ones(2)), opt)
    arrays = net_to_arrays("p", net, opt)
    net2, opt2 = net_from_arrays("p", arrays)
    assert net2.checksum() == net.checksum()
    assert opt2.t == opt.t and all(np.array_equal(a, b) for a, b in zip(opt2.m, opt.m))
    assert CHECKPOINT_VERSION == 1
