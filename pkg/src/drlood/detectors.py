"""Per-sample OOD scores. Every score is oriented so that higher means more ID-like.

All scoring functions take a batch of rows (or a single vector) and return
one score per row. Detectors that need statistics of the training data
(Mahalanobis, rectified activations, kNN) have a ``fit_*`` function whose
result is read-only afterwards.
"""
from dataclasses import dataclass
import csv

import numpy as np

from drlood import kernels
from drlood.auxiliary import distribution_rep
from drlood.errors import NumericError, ShapeError
from drlood.numerics import (
    GradientTape,
    apply_output_layer,
    backward,
    forward,
    log_softmax,
    logsumexp,
    softmax,
)
from drlood.pretrain import extract_rep

DETECTORS = ("msp", "odin", "energy", "mahalanobis", "ra", "knn", "ensemble", "drl")


@dataclass(frozen=True)
class ScoredSample:
    sample_id: int
    detector: str
    score: float
    is_ood: bool


@dataclass
class DetectorConfig:
    kind: str = "msp"
    temperature: float = 1.0
    odin_temperature: float = 1000.0
    odin_delta: float = 0.0014
    knn_k: int = 10
    ra_percentile: float = 90.0
    ensemble_size: int = 5
    ridge: float = 1e-6

    def __post_init__(self):
        if self.kind not in DETECTORS:
            raise ValueError(f"unknown detector {self.kind!r}")
        if self.temperature <= 0 or self.odin_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if min(self.odin_delta, self.ridge) < 0 or not 0 <= self.ra_percentile <= 100:
            raise ValueError("magnitudes must be nonnegative and the percentile in [0, 100]")
        if self.knn_k < 1 or self.ensemble_size < 1:
            raise ValueError("k and ensemble size must be positive")


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


def _out(scores, single):
    return float(scores[0]) if single else scores


def argmax_first(probs):
    """Argmax along the last axis; ties go to the lowest index."""
    return np.argmax(probs, axis=-1)


def drl_output(model, x):
    """Average of ``softmax(c)`` and ``softmax(d)`` for each input."""
    xb, single = _batch(x)
    d = np.atleast_2d(extract_rep(model.pretrained, xb))
    c = np.atleast_2d(distribution_rep(model, xb, d=d))
    out = (softmax(c) + softmax(d)) / 2
    return out[0] if single else out


def drl_score(model, x):
    xb, single = _batch(x)
    return _out(np.max(drl_output(model, xb), axis=-1), single)


def drl_predict(model, x):
    return argmax_first(drl_output(model, x))


def msp_score(net, x):
    xb, single = _batch(x)
    return _out(np.max(softmax(forward(net, xb)), axis=-1), single)


def energy_from_logits(logits, temperature=1.0):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return temperature * logsumexp(np.asarray(logits) / temperature, axis=-1)


def energy_score(net, x, temperature=1.0):
    """Negative free energy ``T log sum exp(logits / T)``."""
    xb, single = _batch(x)
    return _out(energy_from_logits(forward(net, xb), temperature), single)


def odin_input_gradient(net, x, temperature):
    """Gradient w.r.t. the input of ``log max_y softmax(net(x) / T)_y``, summed over rows."""
    xb, _ = _batch(x)
    tape = GradientTape()
    logits = forward(net, xb, tape=tape)
    logp = log_softmax(logits / temperature)
    top = argmax_first(logp)
    rows = np.arange(len(xb))
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[rows, top] = 1.0
    tape.record(lambda g, grads: g * (onehot - probs) / temperature)
    tape.loss = float(np.sum(logp[rows, top]))
    return backward(tape).inputs


def odin_score(net, x, temperature=1000.0, delta=0.0014, feature_scale=None):
    """Temperature-scaled max softmax after a confidence-raising input step.

    The step is ``delta * sign(grad)`` in units of ``feature_scale``
    (per-feature standard deviation of the training data, default 1).
    """
    if temperature <= 0 or delta < 0:
        raise ValueError("ODIN needs T > 0 and delta >= 0")
    xb, single = _batch(x)
    if delta > 0:
        grad = odin_input_gradient(net, xb, temperature)
        scale = 1.0 if feature_scale is None else np.asarray(feature_scale, dtype=np.float64)
        xb = xb - delta * scale * np.sign(-grad)
    logits = forward(net, xb)
    return _out(np.max(softmax(logits / temperature), axis=-1), single)


@dataclass(frozen=True)
class MahalanobisFit:
    """Per hidden layer: class means (K, p) and the shared precision (p, p)."""

    means: tuple
    precisions: tuple


def fit_mahalanobis(net, X, y, num_classes, ridge=1e-6):
    _, hidden = forward(net, X, return_hidden=True)
    if not hidden:
        raise ShapeError("Mahalanobis scoring needs at least one hidden layer")
    y = np.asarray(y)
    means, precisions = [], []
    for h in hidden:
        mu = np.stack([h[y == k].mean(axis=0) for k in range(num_classes)])
        centered = h - mu[y]
        cov = centered.T @ centered / len(h)
        try:
            precision = np.linalg.inv(cov + ridge * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            raise NumericError("class covariance is singular even after the ridge") from None
        if not np.all(np.isfinite(precision)):
            raise NumericError("class covariance is singular even after the ridge")
        means.append(mu)
        precisions.append(precision)
    return MahalanobisFit(tuple(means), tuple(precisions))


def mahalanobis_from_features(fit, features):
    """Sum over layers of the negated minimum class Mahalanobis distance."""
    total = 0.0
    for h, mu, P in zip(features, fit.means, fit.precisions):
        h = np.atleast_2d(h)
        diff = h[:, None, :] - mu[None, :, :]
        dist = np.einsum("nkp,pq,nkq->nk", diff, P, diff)
        total = total - dist.min(axis=1)
    return total


def mahalanobis_score(fit, net, x):
    xb, single = _batch(x)
    _, hidden = forward(net, xb, return_hidden=True)
    return _out(mahalanobis_from_features(fit, hidden), single)


def fit_ra_threshold(net, X, percentile=90.0):
    """Clamp level: the given percentile of all penultimate activations; 100 disables it."""
    if percentile >= 100:
        return np.inf
    _, hidden = forward(net, X, return_hidden=True)
    if not hidden:
        raise ShapeError("rectified activations need a hidden layer")
    return float(np.percentile(hidden[-1], percentile))


def ra_score(net, x, threshold, temperature=1.0):
    """Energy score after clamping penultimate activations at ``threshold``."""
    xb, single = _batch(x)
    _, hidden = forward(net, xb, return_hidden=True)
    logits = apply_output_layer(net, np.minimum(hidden[-1], threshold))
    return _out(energy_from_logits(logits, temperature), single)


def _normalize(h):
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    return h / np.where(norm > 0, norm, 1.0)


def penultimate(net, x):
    _, hidden = forward(net, np.atleast_2d(x), return_hidden=True)
    if not hidden:
        raise ShapeError("kNN scoring needs a hidden layer")
    return hidden[-1]


def fit_knn(net, X):
    """L2-normalized penultimate features of the fit set (the neighbor bank)."""
    bank = _normalize(penultimate(net, X))
    bank.flags.writeable = False
    return bank


def knn_from_features(bank, features, k):
    if not 1 <= k <= len(bank):
        raise ValueError(f"k={k} outside [1, {len(bank)}]")
    return -kernels.kth_distance(_normalize(np.atleast_2d(features)), bank, k)


def knn_score(bank, net, x, k=10):
    """Negated distance to the k-th nearest normalized training feature."""
    xb, single = _batch(x)
    return _out(knn_from_features(bank, penultimate(net, xb), k), single)


def ensemble_output(nets, x):
    if not nets:
        raise ValueError("ensemble needs at least one network")
    k = {n.num_outputs for n in nets}
    if len(k) != 1:
        raise ShapeError("ensemble members disagree on the number of classes")
    xb, single = _batch(x)
    out = sum(softmax(forward(n, xb)) for n in nets) / len(nets)
    return out[0] if single else out


def ensemble_score(nets, x):
    xb, single = _batch(x)
    return _out(np.max(ensemble_output(nets, xb), axis=-1), single)


def scored_samples(detector, id_scores, ood_scores):
    out = [ScoredSample(i, detector, float(s), False) for i, s in enumerate(id_scores)]
    n = len(out)
    out += [ScoredSample(n + i, detector, float(s), True) for i, s in enumerate(ood_scores)]
    for s in out:
        if not np.isfinite(s.score):
            raise NumericError(f"{detector}: non-finite score for sample {s.sample_id}")
    return out


def write_scores(samples, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "detector", "score", "is_ood"])
        for s in samples:
            w.writerow([s.sample_id, s.detector, repr(s.score), int(s.is_ood)])


def read_scores(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["sample_id", "detector", "score", "is_ood"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ScoredSample(int(r["sample_id"]), r["detector"], float(r["score"]),
                             r["is_ood"] in ("1", "true", "True")) for r in reader]
