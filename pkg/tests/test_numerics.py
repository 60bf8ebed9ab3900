import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drlood.errors import NumericError, ProbabilityClampWarning, ShapeError
from drlood.numerics import (
    GradientTape,
    MLPNetwork,
    TrainConfig,
    backward,
    clip_gradients,
    cross_entropy,
    forward,
    init_mlp,
    log_softmax,
    logsumexp,
    sgd_step,
    sgd_train,
    softmax,
    softmax_cross_entropy,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_hand_cases():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax([1000.0, 0.0]), [1.0, 0.0], rtol=0, atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        softmax([np.nan, 1.0])
    with pytest.raises(NumericError):
        softmax([np.inf, 1.0])


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_is_a_distribution(logits):
    p = softmax(logits)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariant(logits, a):
    np.testing.assert_allclose(softmax(logits + a), softmax(logits), atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=finite))
def test_log_softmax_and_logsumexp_agree(logits):
    np.testing.assert_allclose(np.exp(log_softmax(logits)), softmax(logits), atol=1e-12)
    np.testing.assert_allclose(logsumexp(logits), np.log(np.sum(np.exp(logits), axis=-1)),
                               rtol=1e-12, atol=1e-12)


def test_cross_entropy_hand_cases():
    assert cross_entropy(np.array([1.0, 0.0]), 0) == 0.0
    assert cross_entropy(np.array([0.5, 0.5]), 0) == pytest.approx(0.693147, abs=1e-6)
    assert cross_entropy(np.array([0.25] * 4), 2) == pytest.approx(1.386294, abs=1e-6)


def test_cross_entropy_clamps_with_warning():
    with pytest.warns(ProbabilityClampWarning):
        v = cross_entropy(np.array([1.0, 0.0]), 1)
    assert v == pytest.approx(-math.log(1e-12))
    with pytest.raises(ShapeError):
        cross_entropy(np.array([0.5, 0.5]), 2)


def test_forward_trivial_nets():
    zero = MLPNetwork([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    np.testing.assert_array_equal(forward(zero, np.array([1.0, -2.0, 3.0])), [0.0, 0.0])
    ident = MLPNetwork([np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(forward(ident, np.array([1.0, 2.0])), [1.0, 2.0])


def _hand_forward(weights, biases, x):
    h = list(x)
    for li, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(len(b)):
            s = b[j] + sum(h[i] * W[i][j] for i in range(len(h)))
            out.append(max(s, 0.0) if li < len(weights) - 1 else s)
        h = out
    return h


def test_forward_matches_hand_loop():
    W0 = [[0.1, -0.2, 0.3], [0.4, 0.5, -0.6]]
    b0 = [0.01, -0.02, 0.03]
    W1 = [[0.7, -0.1], [-0.3, 0.2], [0.5, 0.9]]
    b1 = [0.05, -0.05]
    net = MLPNetwork([np.array(W0), np.array(W1)], [np.array(b0), np.array(b1)])
    x = [0.3, -1.2]
    np.testing.assert_allclose(forward(net, np.array(x)), _hand_forward([W0, W1], [b0, b1], x), rtol=1e-14)


def test_forward_batch_matches_rows(rng):
    net = init_mlp([5, 7, 3], 1)
    X = rng.normal(size=(6, 5))
    batch = forward(net, X)
    for i in range(6):
        np.testing.assert_allclose(batch[i], forward(net, X[i]), rtol=1e-14)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        forward(init_mlp([3, 2], 0), np.ones(4))


def test_network_shape_validation():
    with pytest.raises(ShapeError):
        MLPNetwork([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ShapeError):
        init_mlp([3], 0)


def test_one_layer_gradient_is_probs_minus_onehot(rng):
    net = init_mlp([4, 3], 2)
    net.biases[0][:] = rng.normal(size=3)
    X = rng.normal(size=(5, 4))
    y = np.array([0, 2, 1, 1, 0])
    tape = GradientTape()
    softmax_cross_entropy(forward(net, X, tape=tape), y, tape=tape)
    grads = backward(tape)
    delta = softmax(forward(net, X)) - np.eye(3)[y]
    np.testing.assert_allclose(grads.weights[0], X.T @ delta / 5, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(grads.biases[0], delta.mean(axis=0), rtol=1e-13, atol=1e-15)


def test_constant_loss_has_zero_gradients():
    net = init_mlp([2, 3, 2], 0)
    tape = GradientTape()
    forward(net, np.ones((1, 2)), tape=tape)
    tape.record(lambda g, grads: np.zeros((1, 2)))
    tape.loss = 1.5
    grads = backward(tape)
    for g in grads.parameters():
        assert not np.any(g)


def test_backward_requires_a_loss():
    with pytest.raises(ValueError):
        backward(GradientTape())
    tape = GradientTape()
    forward(init_mlp([2, 2], 0), np.ones(2), tape=tape)
    with pytest.raises(ValueError):
        backward(tape)


def test_sgd_step_hand_case():
    net = MLPNetwork([np.array([[1.0]])], [np.array([0.0])])
    tape = GradientTape()
    forward(net, np.array([[2.0]]), tape=tape)
    tape.record(lambda g, grads: np.ones((1, 1)))
    tape.loss = 0.0
    grads = backward(tape)  # d(out)/dW = x = 2
    new = sgd_step(net, grads, 0.1)
    assert new.weights[0][0, 0] == pytest.approx(0.8)
    assert net.weights[0][0, 0] == 1.0


def test_sgd_step_zero_lr_and_errors(rng):
    net = init_mlp([3, 2], 0)
    tape = GradientTape()
    softmax_cross_entropy(forward(net, rng.normal(size=(4, 3)), tape=tape), [0, 1, 0, 1], tape=tape)
    grads = backward(tape)
    same = sgd_step(net, grads, 0.0)
    for a, b in zip(same.parameters(), net.parameters()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sgd_step(net.freeze(), grads, 0.1)
    grads.weights[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        sgd_step(net, grads, 0.1)


def test_sgd_monotone_on_convex_problem(rng):
    # a linear softmax model is convex in its parameters
    X = rng.normal(size=(40, 3))
    y = (X[:, 0] > 0).astype(int)
    net = init_mlp([3, 2], 0)
    losses = []
    for _ in range(50):
        tape = GradientTape()
        losses.append(softmax_cross_entropy(forward(net, X, tape=tape), y, tape=tape))
        net = sgd_step(net, backward(tape), 0.05)
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_lr_schedule():
    cfg = TrainConfig(learning_rate=0.1, milestones=(2, 4))
    assert [cfg.lr_at(e) for e in range(6)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001, 0.001])


def test_clip_gradients_rescales_globally(rng):
    net = init_mlp([3, 4, 2], 0)
    tape = GradientTape()
    softmax_cross_entropy(forward(net, 10 * rng.normal(size=(8, 3)), tape=tape),
                          rng.integers(0, 2, 8), tape=tape)
    grads = backward(tape)
    norm = np.sqrt(sum(np.sum(g**2) for g in grads.parameters()))
    clipped = clip_gradients(grads, norm / 2)
    new_norm = np.sqrt(sum(np.sum(g**2) for g in clipped.parameters()))
    assert new_norm == pytest.approx(norm / 2, rel=1e-12)
    assert clip_gradients(grads, norm * 2) is grads


def test_sgd_train_raises_on_divergence(rng):
    X = rng.normal(size=(64, 3)) * 100
    y = rng.integers(0, 2, size=64)

    def loss_fn(net, xb, yb, tape):
        return softmax_cross_entropy(forward(net, xb, tape=tape), yb, tape=tape)

    with pytest.raises(NumericError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sgd_train(init_mlp([3, 16, 2], 0), X, y, TrainConfig(epochs=20, learning_rate=1e8),
                      loss_fn, np.random.default_rng(0))


def test_freeze_makes_arrays_read_only():
    net = init_mlp([2, 3, 2], 0).freeze()
    assert net.frozen
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0
