import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlood.datagen import (
    OOD_KINDS,
    LabeledDataset,
    gen_gaussian_blobs,
    gen_ood,
    gen_two_moons,
    load_dataset,
    save_dataset,
    stratified_split,
)
from drlood.errors import DatasetParseError
from drlood.numerics import TrainConfig
from drlood.pretrain import train_pretrained


def test_zero_spread_collapses_to_means():
    ds = gen_gaussian_blobs(3, 5, 4, 0.0, seed=1)
    means = np.array(ds.meta["means"])
    np.testing.assert_array_equal(ds.features, means[ds.labels])


def test_blobs_are_deterministic_and_seed_sensitive():
    a = gen_gaussian_blobs(4, 20, 8, 2.0, seed=7)
    assert a == gen_gaussian_blobs(4, 20, 8, 2.0, seed=7)
    assert a != gen_gaussian_blobs(4, 20, 8, 2.0, seed=8)
    assert np.bincount(a.labels).tolist() == [20] * 4


def test_separated_blobs_are_linearly_separable():
    ds = gen_gaussian_blobs(2, 100, 3, 0.2, seed=3, center_scale=10.0)
    X = np.hstack([ds.features, np.ones((len(ds), 1))])
    t = 2 * ds.labels - 1
    w = np.zeros(X.shape[1])
    for _ in range(1000):  # perceptron: converges on separable data
        wrong = np.flatnonzero(np.sign(X @ w) != t)
        if not wrong.size:
            break
        w += t[wrong[0]] * X[wrong[0]]
    assert np.all(np.sign(X @ w) == t)


def test_moons_without_noise_lie_on_half_circles():
    ds = gen_two_moons(200, 0.0, seed=0)
    outer = ds.features[ds.labels == 0]
    inner = ds.features[ds.labels == 1]
    np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(inner - [1.0, 0.5], axis=1), 1.0, atol=1e-14)
    assert np.all(outer[:, 1] >= -1e-15) and np.all(inner[:, 1] <= 0.5 + 1e-15)
    assert gen_two_moons(200, 0.1, seed=4) == gen_two_moons(200, 0.1, seed=4)


def test_moons_need_a_nonlinear_classifier():
    train = gen_two_moons(400, 0.1, seed=0)
    cfg = TrainConfig(epochs=150, learning_rate=0.5, milestones=(), batch_size=50)

    def acc(hidden):
        model = train_pretrained(train, cfg, hidden=hidden)
        from drlood.numerics import forward
        return np.mean(np.argmax(forward(model.net, train.features), axis=1) == train.labels)

    linear, mlp = acc(()), acc((32, 32))
    assert linear < mlp
    assert mlp > 0.97


def test_generator_argument_errors():
    with pytest.raises(ValueError):
        gen_gaussian_blobs(1, 10, 2, 1.0, 0)
    with pytest.raises(ValueError):
        gen_two_moons(11, 0.1, 0)
    with pytest.raises(ValueError):
        gen_ood("nope", gen_gaussian_blobs(2, 5, 2, 1.0, 0), 5, 0)


def test_zero_offset_shifted_blob_matches_an_id_class():
    ref = gen_gaussian_blobs(3, 10, 4, 0.0, seed=2)
    ood = gen_ood("shifted-blob", ref, 50, seed=3, offset=0.0)
    means = np.array(ref.meta["means"])
    dist = np.linalg.norm(ood.features[:, None, :] - means[None], axis=2).min(axis=1)
    np.testing.assert_allclose(dist, 0.0, atol=1e-12)
    assert ood.is_ood and np.all(ood.labels == -1)


def test_uniform_box_far_from_id_support():
    ref = gen_gaussian_blobs(4, 200, 6, 1.0, seed=0)
    ood = gen_ood("uniform-box", ref, 300, seed=1, offset=20.0)
    gap = np.linalg.norm(ood.features[:, None, :] - ref.features[None], axis=2).min()
    assert gap > 5.0


@pytest.mark.parametrize("kind", OOD_KINDS)
def test_distance_to_id_means_grows_with_offset(kind):
    ref = gen_gaussian_blobs(4, 50, 8, 1.0, seed=5)
    means = np.array(ref.meta["means"])

    def mean_dist(offset):
        X = gen_ood(kind, ref, 400, seed=6, offset=offset).features
        # distance to the nearest ID mean; the average over all means is not
        # monotone, since a shift can move a class toward another one
        return np.linalg.norm(X[:, None, :] - means[None], axis=2).min(axis=1).mean()

    dists = [mean_dist(o) for o in (0.0, 1.0, 3.0, 6.0, 12.0)]
    assert all(b > a for a, b in zip(dists, dists[1:]))


def test_stratified_split_is_a_partition():
    ds = gen_gaussian_blobs(4, 25, 3, 1.0, seed=0)
    train, test = stratified_split(ds, 0.2, seed=1)
    assert len(train) + len(test) == len(ds)
    assert np.bincount(test.labels).tolist() == [5] * 4
    rows = {tuple(r) for r in np.vstack([train.features, test.features])}
    assert rows == {tuple(r) for r in ds.features}
    assert (train.split, test.split) == ("ID-train", "ID-test")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["blobs", "moons", *OOD_KINDS]))
def test_save_load_round_trip(tmp_path_factory, seed, kind):
    ref = gen_gaussian_blobs(3, 7, 4, 1.5, seed=seed)
    if kind == "blobs":
        ds = ref
    elif kind == "moons":
        ds = gen_two_moons(10, 0.1, seed)
    else:
        ds = gen_ood(kind, ref, 9, seed)
    path = tmp_path_factory.mktemp("ds") / "d.csv"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


def test_hand_written_two_sample_file(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f0,f1,label\n0.5,-1,0\n2,3.25,1\n")
    ds = load_dataset(path)
    np.testing.assert_array_equal(ds.features, [[0.5, -1.0], [2.0, 3.25]])
    np.testing.assert_array_equal(ds.labels, [0, 1])
    assert (ds.num_classes, ds.split, ds.dim) == (2, "ID", 2)


@pytest.mark.parametrize("text,line", [
    ("f0,f1,label\n0.5,1,0\n\n", 3),
    ("f0,f1,label\n0.5,0\n", 2),
    ("x,y,label\n1,2,0\n", 1),
    ("f0,f1,label\n1,abc,0\n", 2),
])
def test_malformed_files(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path)
    assert err.value.line == line


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([0, 3]), 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([0, 1]), 2, split="OOD")
