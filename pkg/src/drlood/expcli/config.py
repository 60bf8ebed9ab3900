"""Experiment configuration: an INI-style ``key = value`` file with sections.

Unset keys take the defaults below. :func:`to_text` writes every key, so a
resolved config reproduces its run exactly.
"""
from dataclasses import dataclass, field, fields
import configparser
import hashlib

from drlood.auxiliary import EPSILON_GRID, SIGMA_KINDS
from drlood.datagen import DEFAULT_OFFSETS, OOD_KINDS
from drlood.detectors import DETECTORS
from drlood.errors import ConfigError
from drlood.numerics import TrainConfig


@dataclass
class DataSpec:
    generator: str = "blobs"
    num_classes: int = 4
    dim: int = 8
    n_train: int = 2000
    n_test: int = 500
    n_ood: int = 500
    spread: float = 2.0
    center_scale: float = 3.0
    noise: float = 0.1
    ood_sets: list = field(default_factory=lambda: list(OOD_KINDS))
    ood_offsets: list = field(default_factory=list)


@dataclass
class NetworkSpec:
    hidden: list = field(default_factory=lambda: [64, 64])
    aux_hidden: list = field(default_factory=list)


@dataclass
class TrainSpec:
    epochs: int = 60
    learning_rate: float = 0.1
    milestones: list = field(default_factory=lambda: [30, 45])
    batch_size: int = 128
    grad_clip: float = 0.0


@dataclass
class AuxSpec(TrainSpec):
    grad_clip: float = 10.0


@dataclass
class DRLSpec:
    epsilon: float = 0.001
    sigma: str = "D"


@dataclass
class DetectorSpec:
    list: list = field(default_factory=lambda: list(DETECTORS))
    energy_temperature: float = 1.0
    odin_temperature: float = 1000.0
    odin_delta: float = 0.0014
    knn_k: int = 10
    ra_percentile: float = 90.0
    ensemble_size: int = 5
    mahalanobis_ridge: float = 1e-6


@dataclass
class ExperimentSpec:
    trials: int = 5
    seed: int = 0
    epsilon_grid: list = field(default_factory=lambda: list(EPSILON_GRID))
    sigma_kinds: list = field(default_factory=lambda: list(SIGMA_KINDS))
    ensemble_sizes: list = field(default_factory=lambda: [1, 2, 3, 4, 5])


SECTIONS = {
    "data": DataSpec,
    "network": NetworkSpec,
    "train": TrainSpec,
    "aux": AuxSpec,
    "drl": DRLSpec,
    "detectors": DetectorSpec,
    "experiment": ExperimentSpec,
}

# element types of list-valued keys
_LIST_TYPES = {
    ("data", "ood_sets"): str, ("data", "ood_offsets"): float,
    ("network", "hidden"): int, ("network", "aux_hidden"): int,
    ("train", "milestones"): int, ("aux", "milestones"): int,
    ("detectors", "list"): str,
    ("experiment", "epsilon_grid"): float, ("experiment", "sigma_kinds"): str,
    ("experiment", "ensemble_sizes"): int,
}


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    aux: AuxSpec = field(default_factory=AuxSpec)
    drl: DRLSpec = field(default_factory=DRLSpec)
    detectors: DetectorSpec = field(default_factory=DetectorSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)

    def train_config(self, seed, aux=False):
        s = self.aux if aux else self.train
        return TrainConfig(epochs=s.epochs, learning_rate=s.learning_rate,
                           milestones=tuple(s.milestones), batch_size=s.batch_size, seed=seed,
                           grad_clip=s.grad_clip or None)

    def trial_seeds(self):
        return [self.experiment.seed + i for i in range(self.experiment.trials)]

    def hash(self):
        return hashlib.sha256(to_text(self).encode()).hexdigest()


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(section, key, raw, default):
    raw = raw.strip()
    try:
        if (section, key) in _LIST_TYPES:
            typ = _LIST_TYPES[(section, key)]
            return [typ(v.strip()) for v in raw.split(",") if v.strip()]
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def validate(cfg):
    d = cfg.data
    if d.generator not in ("blobs", "moons"):
        raise ConfigError(f"[data] generator must be blobs or moons, got {d.generator!r}")
    if d.generator == "moons" and d.num_classes != 2:
        raise ConfigError("[data] moons has exactly 2 classes")
    if d.num_classes < 2 or d.dim < 2:
        raise ConfigError("[data] need num_classes >= 2 and dim >= 2")
    if min(d.n_train, d.n_test, d.n_ood) < 1:
        raise ConfigError("[data] sizes must be positive")
    for kind in d.ood_sets:
        if kind not in OOD_KINDS:
            raise ConfigError(f"[data] unknown OOD set {kind!r}")
    if d.ood_offsets and len(d.ood_offsets) != len(d.ood_sets):
        raise ConfigError("[data] ood_offsets must match ood_sets in length")
    for spec in (cfg.train, cfg.aux):
        if spec.epochs < 0 or spec.batch_size < 1 or spec.learning_rate < 0:
            raise ConfigError("training epochs, batch size and learning rate must be valid")
    if cfg.drl.epsilon < 0 or any(e < 0 for e in cfg.experiment.epsilon_grid):
        raise ConfigError("[drl] epsilon must be nonnegative")
    for kind in [cfg.drl.sigma, *cfg.experiment.sigma_kinds]:
        if kind not in SIGMA_KINDS:
            raise ConfigError(f"unknown covariance kind {kind!r}")
    for name in cfg.detectors.list:
        if name not in DETECTORS:
            raise ConfigError(f"[detectors] unknown detector {name!r}")
    if cfg.detectors.odin_temperature <= 0 or cfg.detectors.energy_temperature <= 0:
        raise ConfigError("[detectors] temperatures must be positive")
    if cfg.detectors.knn_k < 1 or cfg.detectors.ensemble_size < 1:
        raise ConfigError("[detectors] knn_k and ensemble_size must be positive")
    if cfg.experiment.trials < 1 or any(m < 1 for m in cfg.experiment.ensemble_sizes):
        raise ConfigError("[experiment] trials and ensemble sizes must be positive")
    return cfg


def resolve(cfg):
    """Fill derived defaults so the text form is complete."""
    d = cfg.data
    if not d.ood_offsets and set(d.ood_sets) <= set(OOD_KINDS):
        d.ood_offsets = [DEFAULT_OFFSETS[k] * d.spread for k in d.ood_sets]
    if not cfg.network.aux_hidden:
        cfg.network.aux_hidden = list(cfg.network.hidden)
    return validate(cfg)


def from_text(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        spec = getattr(cfg, section)
        known = {f.name for f in fields(spec)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            setattr(spec, key, _parse(section, key, raw, getattr(spec, key)))
    return resolve(cfg)


def load(path):
    try:
        with open(path) as fh:
            return from_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def to_text(cfg):
    lines = []
    for section in SECTIONS:
        spec = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(spec):
            lines.append(f"{f.name} = {_format(getattr(spec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def default_config():
    return resolve(ExperimentConfig())
