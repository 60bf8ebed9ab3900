"""Auxiliary network training through the implicit constraint.

The auxiliary (component) network maps an input to the mean ``mu`` of its
Gaussian component representations. The distribution-discriminative
representation is the expectation of dissimilarity-weighted components,

    c = E[(1 - eps * z.d) z],   z ~ N(mu, Sigma)
      = mu - eps * (Sigma d + (mu . d) mu),

where ``d`` is the frozen pretrained network's logit vector. The closed form
is what training uses; :func:`monte_carlo_c` evaluates the expectation by
sampling and serves as its independent check.
"""
from dataclasses import dataclass
import logging
import os

import numpy as np

from drlood import kernels
from drlood.checkpoint import (
    load_checkpoint,
    load_metadata,
    save_checkpoint,
    save_metadata,
)
from drlood.errors import NumericError, ShapeError
from drlood.numerics import (
    GradientTape,
    MLPNetwork,
    TrainConfig,
    check_finite,
    forward,
    init_mlp,
    sgd_train,
    softmax_cross_entropy,
)
from drlood.pretrain import PretrainedModel, extract_rep

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.001
EPSILON_GRID = (0.0, 0.0001, 0.001, 0.01, 0.1)
SIGMA_KINDS = ("D", "I", "G", "U")
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class CovarianceSpec:
    """Component covariance: ``D`` (pretrained logits), ``I``, ``G`` or ``U``."""

    kind: str
    matrix: np.ndarray
    seed: int = None


def random_symmetric(kind, K, seed):
    """Symmetrized random matrix with unit mean absolute diagonal.

    ``G`` draws entries from N(0, 1), ``U`` from U[0, 1). The result is
    symmetric but not necessarily positive semidefinite.
    """
    rng = np.random.default_rng([seed, 3])
    if kind == "G":
        A = rng.standard_normal((K, K))
    elif kind == "U":
        A = rng.uniform(0.0, 1.0, size=(K, K))
    else:
        raise ValueError(f"random covariance kind must be G or U, got {kind!r}")
    S = 0.5 * (A + A.T)
    return S / np.mean(np.abs(np.diag(S)))


def make_covariance(kind, num_classes, sigma_D=None, seed=0):
    if kind == "D":
        if sigma_D is None:
            raise ValueError("kind D needs the pretrained covariance")
        matrix = np.array(sigma_D, dtype=np.float64)
    elif kind == "I":
        matrix = np.eye(num_classes)
    elif kind in ("G", "U"):
        matrix = random_symmetric(kind, num_classes, seed)
    else:
        raise ValueError(f"unknown covariance kind {kind!r}; expected one of {SIGMA_KINDS}")
    if matrix.shape != (num_classes, num_classes):
        raise ShapeError(f"covariance must be {num_classes}x{num_classes}, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0, atol=SYMMETRY_TOL):
        raise ValueError("covariance must be symmetric")
    matrix.flags.writeable = False
    return CovarianceSpec(kind, matrix, seed if kind in ("G", "U") else None)


@dataclass(frozen=True)
class ComponentSample:
    z: np.ndarray
    w: float


def component_weight(z, d, epsilon):
    return 1.0 - epsilon * float(np.dot(z, d))


@dataclass(frozen=True)
class DRLModel:
    pretrained: PretrainedModel
    aux_net: MLPNetwork
    epsilon: float
    sigma_Z: CovarianceSpec
    losses: tuple = ()

    @property
    def num_classes(self):
        return self.pretrained.num_classes


def construct_c(mu_Z, d, sigma_Z, epsilon):
    """Closed-form distribution-discriminative representation.

    Accepts single vectors or row batches for ``mu_Z`` and ``d``.
    """
    mu_Z = np.asarray(mu_Z, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    sigma_Z = np.asarray(sigma_Z, dtype=np.float64)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if mu_Z.shape != d.shape or sigma_Z.shape != (mu_Z.shape[-1],) * 2:
        raise ShapeError(f"mu {mu_Z.shape}, d {d.shape}, sigma {sigma_Z.shape} are inconsistent")
    c = kernels.implicit_constraint(mu_Z, d, sigma_Z, epsilon)
    check_finite(c, "constructed representation")
    return c[0] if mu_Z.ndim == 1 else c


def psd_factor(sigma):
    """A matrix ``L`` with ``L @ L.T == sigma`` for symmetric PSD ``sigma``.

    Cholesky when it succeeds; otherwise an eigendecomposition with
    round-off negative eigenvalues clipped to zero, which keeps singular
    cases (e.g. a zero matrix) exact.
    """
    sigma = check_finite(np.asarray(sigma, dtype=np.float64), "covariance")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    scale = max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -1e-8 * scale:
        raise NumericError(f"covariance is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def monte_carlo_c(mu_Z, d, sigma_Z, epsilon, n_samples, seed, chunk=65536, antithetic=True):
    """Sample mean of ``(1 - eps * z.d) z`` over ``z ~ N(mu_Z, sigma_Z)``.

    With ``antithetic`` the normals come in pairs ``(xi, -xi)``. The estimate
    stays unbiased and never touches the closed form, but the noise that is
    linear in ``xi`` cancels, which leaves only the much smaller eps-scaled
    quadratic part.
    """
    mu_Z = np.asarray(mu_Z, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    L = psd_factor(sigma_Z)
    K = mu_Z.shape[0]
    rng = np.random.default_rng(seed)
    total = np.zeros(K)
    remaining = n_samples
    while remaining:
        m = min(chunk, remaining)
        if antithetic:
            g = rng.standard_normal((m // 2, K))
            normals = np.vstack([g, -g, rng.standard_normal((m % 2, K))])
        else:
            normals = rng.standard_normal((m, K))
        total += kernels.mc_weighted_sum(mu_Z, L, d, epsilon, normals)
        remaining -= m
    return total / n_samples


def sample_components(mu_Z, d, sigma_Z, epsilon, n_samples, seed):
    """Individual components and their weights, for inspection."""
    rng = np.random.default_rng(seed)
    L = psd_factor(sigma_Z)
    zs = mu_Z + rng.standard_normal((n_samples, len(mu_Z))) @ L.T
    return [ComponentSample(z, component_weight(z, d, epsilon)) for z in zs]


def component_expectation(model, x):
    """Mean component representation: the auxiliary network's logits."""
    return forward(model.aux_net, x)


def distribution_rep(model, x, d=None):
    """``c`` for each input; pass ``d`` if the pretrained logits are at hand."""
    if d is None:
        d = extract_rep(model.pretrained, x)
    return construct_c(component_expectation(model, x), d, model.sigma_Z.matrix, model.epsilon)


def constrained_loss(aux_net, pretrained_net, sigma, epsilon, X, y, tape=None):
    """Mean cross-entropy of ``softmax(c)``; gradients reach only ``aux_net``.

    The backward pass goes through both occurrences of ``mu`` in the
    constraint. ``d`` and ``sigma`` are constants.
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty batch")
    d = np.atleast_2d(forward(pretrained_net, X))
    mu = np.atleast_2d(forward(aux_net, X, tape=tape))
    c = kernels.implicit_constraint(mu, d, sigma, epsilon)
    check_finite(c, "constructed representation")
    if tape is not None:
        tape.record(lambda g, grads: kernels.implicit_constraint_grad(g, mu, d, epsilon))
    return softmax_cross_entropy(c, y, tape=tape)


def aux_loss(model, X, y):
    """Batch loss and its tape for a :class:`DRLModel`."""
    tape = GradientTape()
    loss = constrained_loss(model.aux_net, model.pretrained.net, model.sigma_Z.matrix,
                            model.epsilon, X, y, tape)
    return loss, tape


def train_auxiliary(pretrained, ds, config, epsilon=DEFAULT_EPSILON, sigma_kind="D",
                    sigma_seed=0, hidden=None, init_seed=None):
    """Train the auxiliary network against a frozen pretrained model.

    ``hidden`` defaults to the pretrained network's hidden widths.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if ds.is_ood:
        raise ValueError("auxiliary training needs labeled ID data")
    if not pretrained.net.frozen:
        raise ValueError("pretrained network must be finalized (frozen)")
    sigma = make_covariance(sigma_kind, pretrained.num_classes, pretrained.sigma_D, sigma_seed)
    if hidden is None:
        hidden = pretrained.net.layer_dims[1:-1]
    seed = config.seed if init_seed is None else init_seed
    net = init_mlp([ds.dim, *hidden, pretrained.num_classes], [seed, 2])
    frozen_net = pretrained.net

    def loss_fn(net, xb, yb, tape):
        return constrained_loss(net, frozen_net, sigma.matrix, epsilon, xb, yb, tape)

    rng = np.random.default_rng([config.seed, 4])
    net, losses = sgd_train(net, ds.features, ds.labels, config, loss_fn, rng, log=log)
    return DRLModel(pretrained, net.freeze(), float(epsilon), sigma, tuple(losses))


MANIFEST = "drl.manifest"


def save_drl(model, directory):
    """Write pretrained + auxiliary checkpoints and a plain-text manifest."""
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(model.pretrained.net, os.path.join(directory, "pretrained.ckpt"))
    save_metadata(os.path.join(directory, "pretrained.meta"), model.num_classes,
                  model.pretrained.input_dim, model.pretrained.config.seed, model.pretrained.sigma_D)
    save_checkpoint(model.aux_net, os.path.join(directory, "aux.ckpt"))
    lines = [
        "pretrained = pretrained.ckpt",
        "aux = aux.ckpt",
        f"epsilon = {model.epsilon!r}",
        f"sigma_kind = {model.sigma_Z.kind}",
        f"sigma_seed = {model.sigma_Z.seed if model.sigma_Z.seed is not None else ''}",
    ]
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pretrained(directory, config=None):
    net = load_checkpoint(os.path.join(directory, "pretrained.ckpt")).freeze()
    meta = load_metadata(os.path.join(directory, "pretrained.meta"))
    sigma = meta["sigma"]
    sigma.flags.writeable = False
    config = config or TrainConfig(seed=meta["seed"])
    return PretrainedModel(net, meta["num_classes"], config, sigma)


def load_drl(directory):
    fields = {}
    with open(os.path.join(directory, MANIFEST)) as fh:
        for line in fh:
            if line.strip():
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
    pretrained = load_pretrained(directory)
    aux = load_checkpoint(os.path.join(directory, fields["aux"])).freeze()
    seed = int(fields["sigma_seed"]) if fields.get("sigma_seed") else 0
    sigma = make_covariance(fields["sigma_kind"], pretrained.num_classes, pretrained.sigma_D, seed)
    return DRLModel(pretrained, aux, float(fields["epsilon"]), sigma)
