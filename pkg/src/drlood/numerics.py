"""Feed-forward networks, reverse-mode gradients and SGD on float64 arrays.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Weights are
stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``. Hidden layers
use ReLU; the last layer emits raw logits.

Gradients come from a :class:`GradientTape`. Every differentiable step
appends a backward closure to the tape; :func:`backward` walks them in
reverse. The graphs built here are always a single chain (network, then an
optional transform, then a scalar loss), so the tape is a list rather than a
general DAG.
"""
from dataclasses import dataclass
import warnings

import numpy as np

from drlood.errors import NumericError, ProbabilityClampWarning, ShapeError

PROB_FLOOR = 1e-12


def check_finite(a, what="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite values")
    return a


@dataclass
class MLPNetwork:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[0]} inputs, previous emits "
                                 f"{self.weights[i - 1].shape[1]}")

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def num_outputs(self):
        return self.weights[-1].shape[1]

    @property
    def frozen(self):
        return not self.weights[0].flags.writeable

    def parameters(self):
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MLPNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def freeze(self):
        """Return a copy whose arrays are read-only."""
        net = self.copy()
        for a in net.parameters():
            a.flags.writeable = False
        return net


def init_mlp(layer_dims, seed):
    """Glorot-uniform weights, zero biases."""
    if len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ShapeError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPNetwork(weights, biases)


def logsumexp(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(logits - m), axis=axis))


def softmax(logits):
    """Softmax along the last axis, max-subtracted."""
    logits = check_finite(np.asarray(logits, dtype=np.float64), "logits")
    if logits.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits):
    logits = check_finite(np.asarray(logits, dtype=np.float64), "logits")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy(probs, label):
    """``-log probs[label]`` with the probability floored at 1e-12.

    A :class:`ProbabilityClampWarning` is issued when the floor is hit.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ShapeError(f"label {label} outside [0, {probs.shape[-1]})")
    p = probs[label]
    if p < PROB_FLOOR:
        warnings.warn(f"probability {p!r} clamped to {PROB_FLOOR}", ProbabilityClampWarning,
                      stacklevel=2)
        p = PROB_FLOOR
    return float(-np.log(p))


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray = None

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


class GradientTape:
    """Records backward closures for one forward pass ending in a scalar loss.

    A closure has the signature ``fn(upstream, grads) -> downstream`` where
    ``grads`` is the :class:`Gradients` being filled. The tape is reusable:
    :func:`backward` does not consume it.
    """

    def __init__(self):
        self._ops = []
        self._net = None
        self.loss = None

    def __len__(self):
        return len(self._ops)

    def record(self, fn):
        self._ops.append(fn)

    def attach(self, net):
        if self._net is not None and self._net is not net:
            raise ValueError("a tape records a single network")
        self._net = net


def _dense_backward(layer, x, w):
    def fn(g, grads):
        grads.weights[layer] = x.T @ g
        grads.biases[layer] = g.sum(axis=0)
        return g @ w.T
    return fn


def _relu_backward(mask):
    def fn(g, grads):
        return g * mask
    return fn


def forward(net, x, tape=None, return_hidden=False):
    """Logits of ``net`` for a vector ``x`` or a batch of rows.

    With ``return_hidden`` also returns the post-ReLU activations of every
    hidden layer (last entry is the penultimate layer).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise ShapeError(f"input has shape {x.shape}, network expects {net.input_dim} features")
    check_finite(h, "input")
    if tape is not None:
        tape.attach(net)
    hidden = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if tape is not None:
            tape.record(_dense_backward(i, h, w))
        pre = h @ w + b
        if i < last:
            h = np.maximum(pre, 0.0)
            if tape is not None:
                tape.record(_relu_backward(pre > 0.0))
            hidden.append(h[0] if single else h)
        else:
            h = pre
    logits = check_finite(h[0] if single else h, "logits")
    if return_hidden:
        return logits, hidden
    return logits


def apply_output_layer(net, penultimate):
    """Apply only the final linear layer to penultimate activations."""
    return np.asarray(penultimate, dtype=np.float64) @ net.weights[-1] + net.biases[-1]


def softmax_cross_entropy(logits, labels, tape=None):
    """Mean cross-entropy of ``softmax(logits)`` against integer labels.

    Uses log-softmax directly, so the loss is finite for any finite logits.
    """
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{n} logit rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits)
    loss = float(-np.mean(logp[np.arange(n), labels]))
    if tape is not None:
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), labels] = 1.0

        def fn(g, grads):
            return g * (probs - onehot) / n

        tape.record(fn)
        tape.loss = loss
    return loss


def backward(tape):
    """Gradients of the tape's scalar loss w.r.t. every parameter and the input."""
    if not len(tape):
        raise ValueError("backward called on an empty tape")
    if tape.loss is None:
        raise ValueError("tape has no scalar loss recorded")
    net = tape._net
    n_layers = len(net.weights) if net is not None else 0
    grads = Gradients(
        weights=[None] * n_layers,
        biases=[None] * n_layers,
    )
    g = 1.0
    for fn in reversed(tape._ops):
        g = fn(g, grads)
    grads.inputs = np.asarray(g)
    # a layer the loss never reached has a zero gradient
    for i in range(n_layers):
        if grads.weights[i] is None:
            grads.weights[i] = np.zeros_like(net.weights[i])
            grads.biases[i] = np.zeros_like(net.biases[i])
    return grads


def sgd_step(net, grads, learning_rate):
    """Return a new network with ``p - lr * grad`` for every parameter."""
    if learning_rate < 0 or not np.isfinite(learning_rate):
        raise ValueError(f"learning rate must be a nonnegative finite number, got {learning_rate}")
    if net.frozen:
        raise ValueError("cannot update a frozen network")
    new_w, new_b = [], []
    for i, (w, b, gw, gb) in enumerate(zip(net.weights, net.biases, grads.weights, grads.biases)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"layer {i}: gradient shape does not match parameter shape")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError(f"non-finite gradient in layer {i}; step rejected")
        new_w.append(w - learning_rate * gw)
        new_b.append(b - learning_rate * gb)
    return MLPNetwork(new_w, new_b)


@dataclass
class TrainConfig:
    """Mini-batch SGD settings shared by pretrained and auxiliary training."""

    epochs: int = 60
    learning_rate: float = 0.1
    milestones: tuple = (30, 45)
    batch_size: int = 128
    seed: int = 0
    grad_clip: float = None

    def lr_at(self, epoch):
        """Learning rate for a 0-based epoch: divided by 10 at each milestone passed."""
        drops = sum(epoch >= m for m in self.milestones)
        return self.learning_rate * (0.1 ** drops)


def clip_gradients(grads, max_norm):
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.parameters()))
    if not np.isfinite(norm) or norm <= max_norm:
        return grads
    f = max_norm / norm
    return Gradients([w * f for w in grads.weights], [b * f for b in grads.biases], grads.inputs)


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def sgd_train(net, X, y, config, loss_fn, rng, log=None):
    """Run ``config.epochs`` of shuffled mini-batch SGD.

    ``loss_fn(net, xb, yb, tape)`` must return the batch loss and fill the
    tape. Returns the trained network and the mean loss of every epoch.
    """
    losses = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        total, count = 0.0, 0
        for idx in minibatches(len(X), config.batch_size, rng):
            tape = GradientTape()
            loss = loss_fn(net, X[idx], y[idx], tape)
            if not np.isfinite(loss):
                raise NumericError(f"loss diverged at epoch {epoch} (lr {lr:g}): {loss}")
            grads = backward(tape)
            if config.grad_clip:
                grads = clip_gradients(grads, config.grad_clip)
            net = sgd_step(net, grads, lr)
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
        if log is not None:
            log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, losses[-1])
    return net, losses
