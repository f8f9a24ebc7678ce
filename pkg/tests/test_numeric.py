import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalhrl.numeric import (AdamState, ConfigurationError, DenseNet, Trainer, adam_step, backward,
                               forward, grad_check, log_softmax, loss_value, nll, softmax)


def random_case(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    dims = [int(rng.integers(2, 6)) for _ in range(depth + 1)]
    head = "softmax" if seed % 2 == 0 else "q"
    net = DenseNet.create(dims, head, rng)
    x = rng.normal(size=(int(rng.integers(1, 5)), dims[0]))
    if head == "softmax":
        return net, x, rng.integers(0, dims[-1], size=len(x)), None
    if seed % 4 == 1:
        return net, x, rng.normal(size=len(x)), rng.integers(0, dims[-1], size=len(x))
    return net, x, rng.normal(size=(len(x), dims[-1])), None


def test_grad_check_on_many_random_nets():
    worst = max(grad_check(*random_case(s)[:3], actions=random_case(s)[3]) for s in range(120))
    assert worst < 1e-4


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_normalised(values):
    p = softmax(np.array(values))
    assert abs(p.sum() - 1.0) < 1e-6
    assert np.all(p >= 0)


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 10**6))
@settings(max_examples=50)
def test_softmax_rows_and_log_softmax_agree(rows, cols, seed):
    z = np.random.default_rng(seed).normal(scale=30, size=(rows, cols))
    assert np.allclose(softmax(z).sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-9)


def test_softmax_handles_huge_logits():
    p = softmax(np.array([1e4, 0.0, -1e4]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


@given(st.integers(0, 10**6), st.floats(1e-5, 1.0))
@settings(max_examples=30)
def test_adam_zero_gradient_is_identity(seed, lr):
    rng = np.random.default_rng(seed)
    params = [rng.normal(size=(3, 4)), rng.normal(size=5)]
    before = [p.copy() for p in params]
    state = AdamState.zeros_like(params)
    for _ in range(5):
        adam_step(params, [np.zeros_like(p) for p in params], state, lr)
    assert all(np.array_equal(a, b) for a, b in zip(params, before))


def test_adam_first_step_moves_by_lr_in_gradient_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([3.0, -0.1, 0.0])]
    adam_step(p, g, AdamState.zeros_like(p), 0.01)
    assert np.allclose(p[0], [0.99, -1.99, 0.5], atol=1e-6)


def test_zero_net_predicts_uniform_and_nll_is_log_card():
    net = DenseNet.create([4, 8, 3], "softmax", zero=True)
    probs = forward(net, np.ones((2, 4)))
    assert np.allclose(probs, 1 / 3)
    assert nll(probs[0], 1) == pytest.approx(np.log(3))


def test_nll_floor_keeps_loss_finite():
    assert np.isfinite(nll(np.array([1.0, 0.0]), 1))


def test_training_reduces_loss(rng):
    net = DenseNet.create([3, 16, 2], "softmax", rng)
    x = rng.normal(size=(64, 3))
    y = (x[:, 0] > 0).astype(int)
    tr = Trainer(net, 1e-2)
    first = loss_value(net, x, y)
    for _ in range(200):
        tr.step(x, y)
    assert loss_value(net, x, y) < 0.5 * first


def test_grow_keeps_old_function(rng):
    net = DenseNet.create([3, 5, 2], "q", rng)
    x = rng.normal(size=(4, 3))
    before = forward(net, x)
    net.grow_input(2)
    net.grow_output(1)
    after = forward(net, np.hstack([x, rng.normal(size=(4, 2))]))
    assert np.allclose(after[:, :2], before)
    assert np.allclose(after[:, 2], 0.0)
    state = AdamState.zeros_like([np.zeros((5, 3))])
    state.grow_like([np.zeros((5, 5))])
    assert state.first_moment[0].shape == (5, 5)


def test_shape_errors():
    net = DenseNet.create([3, 2], "softmax")
    with pytest.raises(ConfigurationError):
        forward(net, np.zeros((1, 4)))
    with pytest.raises(ConfigurationError):
        DenseNet([3, 2], [np.zeros((3, 3))], [np.zeros(2)])
    with pytest.raises(ConfigurationError):
        DenseNet.create([3, 2], "tanh")


def test_backward_q_head_only_touches_selected_actions(rng):
    net = DenseNet.create([2, 3], "q", rng)
    x = rng.normal(size=(1, 2))
    _, grads = backward(net, x, [1.0], [2])
    w_grad = grads[0]
    assert np.allclose(w_grad[:2], 0.0) and not np.allclose(w_grad[2], 0.0)
