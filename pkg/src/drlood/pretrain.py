"""The label-discriminative (pretrained) network and its logit covariance."""
from dataclasses import dataclass, replace
import logging

import numpy as np

from drlood.errors import ShapeError
from drlood.numerics import (
    MLPNetwork,
    TrainConfig,
    forward,
    init_mlp,
    sgd_train,
    softmax_cross_entropy,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainedModel:
    net: MLPNetwork
    num_classes: int
    config: TrainConfig
    sigma_D: np.ndarray
    losses: tuple = ()

    @property
    def input_dim(self):
        return self.net.input_dim


def _ce_loss(net, xb, yb, tape):
    return softmax_cross_entropy(forward(net, xb, tape=tape), yb, tape=tape)


def train_pretrained(ds, config, hidden=(64, 64), init_seed=None, net=None):
    """Train a classifier on ``ds`` with cross-entropy and finalize it.

    ``config.seed`` drives batch order; ``init_seed`` (defaults to the same
    seed) drives initialization. A prebuilt ``net`` skips initialization.
    Returns a :class:`PretrainedModel` with a read-only network and its
    covariance over ``ds`` populated.
    """
    if ds.is_ood or ds.num_classes < 2:
        raise ValueError("pretraining needs a labeled ID dataset with at least 2 classes")
    if net is None:
        seed = config.seed if init_seed is None else init_seed
        net = init_mlp([ds.dim, *hidden, ds.num_classes], seed)
    elif net.num_outputs != ds.num_classes or net.input_dim != ds.dim:
        raise ShapeError("network shape does not match the dataset")
    rng = np.random.default_rng([config.seed, 1])
    net, losses = sgd_train(net, ds.features, ds.labels, config, _ce_loss, rng, log=log)
    net = net.freeze()
    model = PretrainedModel(net, ds.num_classes, config, np.zeros((ds.num_classes,) * 2),
                            tuple(losses))
    return replace(model, sigma_D=estimate_sigma_D(model, ds))


def extract_rep(model, x):
    """The label-discriminative representation: raw logits of the pretrained net."""
    return forward(model.net, x)


def estimate_sigma_D(model, ds):
    """Unbiased (n - 1) covariance of the logits over ``ds``."""
    if len(ds) < 2:
        raise ValueError("need at least two samples to estimate a covariance")
    d = np.atleast_2d(extract_rep(model, ds.features))
    centered = d - d.mean(axis=0)
    sigma = centered.T @ centered / (d.shape[0] - 1)
    sigma = 0.5 * (sigma + sigma.T)
    sigma.flags.writeable = False
    return sigma
