import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlood.auxiliary import (
    DRLModel,
    component_expectation,
    constrained_loss,
    construct_c,
    distribution_rep,
    load_drl,
    make_covariance,
    monte_carlo_c,
    psd_factor,
    random_symmetric,
    sample_components,
    save_drl,
    train_auxiliary,
)
from drlood.checkpoint import checkpoint_sha256
from drlood.datagen import gen_gaussian_blobs
from drlood.errors import NumericError, ShapeError
from drlood.gradcheck import aux_loss_fn, check_parameter_gradients
from drlood.numerics import MLPNetwork, TrainConfig, forward, init_mlp, softmax_cross_entropy
from drlood.pretrain import train_pretrained

FAST = TrainConfig(epochs=12, learning_rate=0.1, milestones=(8,), batch_size=32, seed=0, grad_clip=10.0)


@pytest.fixture(scope="module")
def setup():
    ds = gen_gaussian_blobs(3, 60, 4, 1.0, seed=0, center_scale=4.0)
    pre = train_pretrained(ds, FAST, hidden=(16,))
    return ds, pre


def test_construct_c_hand_case():
    c = construct_c([1.0, 0.0], [2.0, 1.0], np.eye(2), 0.1)
    np.testing.assert_allclose(c, [0.6, -0.1], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_construct_c_degenerate_cases(seed):
    r = np.random.default_rng(seed)
    k = int(r.integers(1, 8))
    mu, d = r.normal(size=k), r.normal(size=k)
    A = r.normal(size=(k, k))
    np.testing.assert_array_equal(construct_c(mu, d, A @ A.T, 0.0), mu)
    np.testing.assert_array_equal(construct_c(mu, np.zeros(k), A @ A.T, 0.3), mu)


def test_construct_c_batch_and_errors(rng):
    mu, d = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    batch = construct_c(mu, d, np.eye(3), 0.05)
    for i in range(5):
        np.testing.assert_allclose(batch[i], construct_c(mu[i], d[i], np.eye(3), 0.05), rtol=1e-15)
    with pytest.raises(ShapeError):
        construct_c(mu, d[:, :2], np.eye(3), 0.1)
    with pytest.raises(ValueError):
        construct_c(mu, d, np.eye(3), -0.1)


def test_monte_carlo_matches_hand_instance():
    mc = monte_carlo_c([1.0, 0.0], [2.0, 1.0], np.eye(2), 0.1, 10**6, seed=0)
    np.testing.assert_allclose(mc, [0.6, -0.1], rtol=0.01)


def test_monte_carlo_point_mass_is_exact():
    mu, d = np.array([0.5, -1.0, 2.0]), np.array([1.0, 0.25, -0.5])
    mc = monte_carlo_c(mu, d, np.zeros((3, 3)), 0.2, 1000, seed=1)
    np.testing.assert_allclose(mc, (1 - 0.2 * mu @ d) * mu, rtol=1e-14)


def test_monte_carlo_zero_epsilon_is_sample_mean(rng):
    mu = rng.normal(size=4)
    A = rng.normal(size=(4, 4))
    sigma = A @ A.T
    n = 40000
    mc = monte_carlo_c(mu, rng.normal(size=4), sigma, 0.0, n, seed=2)
    assert np.all(np.abs(mc - mu) <= 4 * np.sqrt(np.diag(sigma) / n))


def test_sample_components_weights(rng):
    comps = sample_components(np.zeros(2), np.array([1.0, 0.0]), np.eye(2), 0.5, 5, seed=0)
    for c in comps:
        assert c.w == pytest.approx(1 - 0.5 * c.z[0])


def test_psd_factor(rng):
    A = rng.normal(size=(4, 2))
    sigma = A @ A.T  # rank 2
    L = psd_factor(sigma)
    np.testing.assert_allclose(L @ L.T, sigma, atol=1e-12)
    with pytest.raises(NumericError):
        psd_factor(np.diag([1.0, -1.0]))


def test_covariance_kinds():
    eye = make_covariance("I", 3)
    np.testing.assert_array_equal(eye.matrix, np.eye(3))
    for kind in ("G", "U"):
        spec = make_covariance(kind, 4, seed=7)
        np.testing.assert_array_equal(spec.matrix, spec.matrix.T)
        assert np.mean(np.abs(np.diag(spec.matrix))) == pytest.approx(1.0)
        np.testing.assert_array_equal(spec.matrix, random_symmetric(kind, 4, 7))
    with pytest.raises(ValueError):
        make_covariance("D", 3)
    with pytest.raises(ValueError):
        make_covariance("Z", 3)


def test_distribution_rep_is_aux_forward_then_constraint(setup, rng):
    ds, pre = setup
    aux = init_mlp([4, 16, 3], 9).freeze()
    model = DRLModel(pre, aux, 0.01, make_covariance("I", 3))
    X = ds.features[:5]
    np.testing.assert_array_equal(component_expectation(model, X), forward(aux, X))
    expected = construct_c(forward(aux, X), forward(pre.net, X), np.eye(3), 0.01)
    np.testing.assert_array_equal(distribution_rep(model, X), expected)
    zero = MLPNetwork([np.zeros((4, 3))], [np.zeros(3)]).freeze()
    np.testing.assert_array_equal(component_expectation(DRLModel(pre, zero, 0.01, make_covariance("I", 3)), X),
                                  np.zeros((5, 3)))


def test_zero_epsilon_loss_is_plain_cross_entropy(setup):
    ds, pre = setup
    aux = init_mlp([4, 16, 3], 2)
    X, y = ds.features[:20], ds.labels[:20]
    got = constrained_loss(aux, pre.net, pre.sigma_D, 0.0, X, y)
    assert got == softmax_cross_entropy(forward(aux, X), y)


def test_confident_correct_loss_is_near_zero(setup):
    _, pre = setup
    aux = MLPNetwork([np.zeros((4, 3))], [np.array([50.0, 0.0, 0.0])])
    loss = constrained_loss(aux, pre.net, np.eye(3), 1e-6, np.ones((3, 4)), [0, 0, 0])
    assert loss < 1e-15


def test_loss_gradient_on_two_class_instance(rng):
    pre = init_mlp([2, 4, 2], 1).freeze()
    aux = init_mlp([2, 4, 2], 2)
    A = rng.normal(size=(2, 2))
    X, y = rng.normal(size=(6, 2)), rng.integers(0, 2, 6)
    res = check_parameter_gradients("aux", aux, aux_loss_fn(pre, A @ A.T, 0.05, X, y))
    assert res.passed and res.max_rel_error < 1e-4


def test_training_keeps_pretrained_frozen_and_learns(setup):
    ds, pre = setup
    before = checkpoint_sha256(pre.net)
    model = train_auxiliary(pre, ds, FAST, epsilon=0.001)
    assert checkpoint_sha256(pre.net) == before
    assert checkpoint_sha256(model.pretrained.net) == before
    acc = np.mean(np.argmax(distribution_rep(model, ds.features), axis=1) == ds.labels)
    assert acc >= 0.9
    again = train_auxiliary(pre, ds, FAST, epsilon=0.001)
    assert checkpoint_sha256(again.aux_net) == checkpoint_sha256(model.aux_net)


def test_training_preconditions(setup):
    ds, pre = setup
    with pytest.raises(ValueError):
        train_auxiliary(pre, ds, FAST, epsilon=-1.0)


def test_save_load_round_trip(setup, tmp_path):
    ds, pre = setup
    model = train_auxiliary(pre, ds, TrainConfig(epochs=2, batch_size=64), epsilon=0.01,
                            sigma_kind="G", sigma_seed=3)
    save_drl(model, tmp_path)
    back = load_drl(tmp_path)
    assert back.epsilon == model.epsilon and back.sigma_Z.kind == "G"
    np.testing.assert_array_equal(back.sigma_Z.matrix, model.sigma_Z.matrix)
    np.testing.assert_array_equal(distribution_rep(back, ds.features), distribution_rep(model, ds.features))
