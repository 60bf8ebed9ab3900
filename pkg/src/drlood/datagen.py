"""Synthetic in-distribution and OOD datasets, and their CSV form.

Every generator is a pure function of its arguments, seed included. ID
generators record what OOD generators need (class means, spread) in
``LabeledDataset.meta``.

CSV layout: optional ``# meta: {json}`` comment line, a header
``f0,...,f{dim-1},label``, then one row per sample. Reals are written with
17 significant digits; unlabeled (OOD) rows carry label ``-1``.
"""
from dataclasses import dataclass, field, replace
import json

import numpy as np

from drlood.errors import DatasetParseError

SPLITS = ("ID-train", "ID-test", "ID", "OOD")
OOD_KINDS = ("shifted-blob", "ring", "uniform-box")
# default offsets, in units of the reference spread
DEFAULT_OFFSETS = {"shifted-blob": 2.5, "ring": 2.0, "uniform-box": 3.0}


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "ID"
    generator: str = ""
    seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.split == "OOD":
            if np.any(self.labels != -1):
                raise ValueError("OOD datasets carry no class labels")
        elif self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def is_ood(self):
        return self.split == "OOD"

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and (self.num_classes, self.split, self.generator, self.seed, self.meta)
                == (other.num_classes, other.split, other.generator, other.seed, other.meta))


def gen_gaussian_blobs(num_classes, n_per_class, dim, spread, seed, center_scale=4.0):
    """Isotropic Gaussian classes around means drawn from N(0, center_scale^2 I)."""
    if num_classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, center_scale, size=(num_classes, dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    X = means[labels] + spread * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return LabeledDataset(
        X[order], labels[order], num_classes, split="ID", generator="blobs", seed=seed,
        meta={"means": means.tolist(), "spread": float(spread), "center_scale": float(center_scale)},
    )


def gen_two_moons(n, noise, seed):
    """Two interleaved unit half-circles, ``n // 2`` points each."""
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even count")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([outer, inner])
    y = np.repeat([0, 1], half)
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    order = rng.permutation(n)
    means = [[0.0, 2.0 / np.pi], [1.0, 0.5 - 2.0 / np.pi]]  # centroids of the two arcs
    return LabeledDataset(X[order], y[order], 2, split="ID", generator="moons", seed=seed,
                          meta={"means": means, "spread": float(max(noise, 0.5))})


def _random_units(rng, count, dim):
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_ood(kind, reference, n, seed, offset=None):
    """OOD samples placed relative to the support of ``reference``.

    ``shifted-blob``
        Each sample picks an ID class, then its mean is moved by ``offset``
        along a per-class random unit direction; same spread as the ID data.
        Offset 0 reproduces the ID mixture (near OOD for small offsets).
    ``ring``
        Points on the sphere of radius ``R + offset`` around the ID
        centroid, where ``R`` is the largest centroid-to-mean distance plus
        three spreads, with a little radial noise.
    ``uniform-box``
        Uniform in a cube of half-width ``2 * spread`` centred ``R + offset``
        away from the ID centroid along a random direction.
    """
    if kind not in OOD_KINDS:
        raise ValueError(f"unknown OOD kind {kind!r}; expected one of {OOD_KINDS}")
    if "means" not in reference.meta or "spread" not in reference.meta:
        raise ValueError("reference dataset carries no generator metadata")
    if n < 1:
        raise ValueError("n must be positive")
    means = np.asarray(reference.meta["means"], dtype=np.float64)
    spread = float(reference.meta["spread"])
    if offset is None:
        offset = DEFAULT_OFFSETS[kind] * spread
    if offset < 0:
        raise ValueError("offset must be nonnegative")
    k, dim = means.shape
    rng = np.random.default_rng(seed)
    centroid = means.mean(axis=0)
    radius = np.max(np.linalg.norm(means - centroid, axis=1)) + 3.0 * spread
    if kind == "shifted-blob":
        directions = _random_units(rng, k, dim)
        cls = rng.integers(0, k, size=n)
        X = means[cls] + offset * directions[cls] + spread * rng.standard_normal((n, dim))
    elif kind == "ring":
        u = _random_units(rng, n, dim)
        r = radius + offset + 0.1 * spread * rng.standard_normal(n)
        X = centroid + r[:, None] * u
    else:
        direction = _random_units(rng, 1, dim)[0]
        center = centroid + (radius + offset) * direction
        half = 2.0 * spread
        X = center + rng.uniform(-half, half, size=(n, dim))
    return LabeledDataset(
        X, np.full(n, -1), k, split="OOD", generator=kind, seed=seed,
        meta={"offset": float(offset), "reference": reference.generator},
    )


def stratified_split(ds, test_fraction, seed):
    """Split per class so each class contributes ``round(n_k * test_fraction)`` test rows."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(idx.size * test_fraction))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return (replace(ds, features=ds.features[train_idx], labels=ds.labels[train_idx], split="ID-train"),
            replace(ds, features=ds.features[test_idx], labels=ds.labels[test_idx], split="ID-test"))


def save_dataset(ds, path):
    meta = {"num_classes": ds.num_classes, "split": ds.split, "generator": ds.generator,
            "seed": ds.seed, "meta": ds.meta}
    header = ",".join([f"f{j}" for j in range(ds.dim)] + ["label"])
    with open(path, "w", newline="\n") as fh:
        fh.write("# meta: " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(header + "\n")
        for row, label in zip(ds.features, ds.labels):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{int(label)}\n")


def load_dataset(path):
    """Parse a dataset CSV. Files without a meta line get inferred fields."""
    meta = None
    header = None
    rows, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("meta:") and header is None:
                    try:
                        meta = json.loads(body[len("meta:"):])
                    except json.JSONDecodeError as exc:
                        raise DatasetParseError(f"bad meta line: {exc}", lineno) from None
                continue
            if header is None:
                header = line.split(",")
                dim = len(header) - 1
                if dim < 1 or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(dim)]:
                    raise DatasetParseError("header must be f0,...,f{dim-1},label", lineno)
                continue
            if not line.strip():
                raise DatasetParseError("empty row", lineno)
            fields = line.split(",")
            if len(fields) != dim + 1:
                raise DatasetParseError(f"expected {dim + 1} fields, got {len(fields)}", lineno)
            try:
                rows.append([float(v) for v in fields[:-1]])
                labels.append(int(fields[-1]))
            except ValueError as exc:
                raise DatasetParseError(str(exc), lineno) from None
    if header is None:
        raise DatasetParseError("missing header", 1)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    y = np.array(labels, dtype=np.int64)
    if meta is None:
        ood = bool(y.size) and bool(np.all(y == -1))
        meta = {"num_classes": int(y.max()) + 1 if y.size and not ood else 0,
                "split": "OOD" if ood else "ID", "generator": "", "seed": None, "meta": {}}
    try:
        return LabeledDataset(X, y, meta["num_classes"], split=meta["split"],
                              generator=meta["generator"], seed=meta["seed"], meta=meta["meta"])
    except (KeyError, ValueError) as exc:
        raise DatasetParseError(f"inconsistent dataset: {exc}") from None
