"""Multi-trial experiments: detector comparison, epsilon sweep, covariance
study, ablation and ensemble-size comparison.

Trial ``i`` reseeds everything (data, initialization, batch order) from
``experiment.seed + i``. Every stage derives its own stream from the trial
seed, so adding a detector never perturbs another's numbers.
"""
from dataclasses import dataclass, field
import csv
import logging
import math
import os

import numpy as np

from drlood import datagen
from drlood import detectors as det
from drlood.auxiliary import distribution_rep, train_auxiliary
from drlood.expcli import config as config_mod
from drlood.expcli.plots import Series, emit_svg_plot
from drlood.metrics import (
    METRIC_FIELDS,
    evaluate,
    reliability_bins,
    write_metrics,
)
from drlood.numerics import softmax
from drlood.pretrain import extract_rep, train_pretrained

log = logging.getLogger(__name__)

METRIC_NAMES = ("auroc", "fpr95", "detection", "accuracy", "ece")


@dataclass
class TrialData:
    seed: int
    full: datagen.LabeledDataset
    train: datagen.LabeledDataset
    test: datagen.LabeledDataset
    oods: dict


def make_trial_data(cfg, seed):
    d = cfg.data
    total = d.n_train + d.n_test
    if d.generator == "blobs":
        per_class = math.ceil(total / d.num_classes)
        full = datagen.gen_gaussian_blobs(d.num_classes, per_class, d.dim, d.spread, [seed, 0],
                                          center_scale=d.center_scale)
    else:
        full = datagen.gen_two_moons(total + total % 2, d.noise, [seed, 0])
    train, test = datagen.stratified_split(full, d.n_test / total, [seed, 5])
    oods = {
        kind: datagen.gen_ood(kind, full, d.n_ood, [seed, 100 + j], offset=off)
        for j, (kind, off) in enumerate(zip(d.ood_sets, d.ood_offsets))
    }
    return TrialData(seed, full, train, test, oods)


class Trial:
    """Models and detector fits for one seed, built lazily and cached."""

    def __init__(self, cfg, seed, data=None):
        self.cfg = cfg
        self.seed = seed
        self.data = data or make_trial_data(cfg, seed)
        self._pretrained = None
        self._drl = {}
        self._members = []
        self._fits = {}

    @property
    def pretrained(self):
        if self._pretrained is None:
            self._pretrained = train_pretrained(self.data.train, self.cfg.train_config(self.seed),
                                                hidden=self.cfg.network.hidden)
        return self._pretrained

    def drl(self, epsilon=None, sigma=None):
        epsilon = self.cfg.drl.epsilon if epsilon is None else epsilon
        sigma = sigma or self.cfg.drl.sigma
        key = (float(epsilon), sigma)
        if key not in self._drl:
            self._drl[key] = train_auxiliary(
                self.pretrained, self.data.train, self.cfg.train_config(self.seed, aux=True),
                epsilon=epsilon, sigma_kind=sigma, sigma_seed=self.seed,
                hidden=self.cfg.network.aux_hidden,
            )
        return self._drl[key]

    def members(self, m):
        """First ``m`` ensemble members; member 0 is the pretrained network."""
        if not self._members:
            self._members.append(self.pretrained.net)
        while len(self._members) < m:
            i = len(self._members)
            extra = train_pretrained(self.data.train, self.cfg.train_config(self.seed),
                                     hidden=self.cfg.network.hidden, init_seed=[self.seed, 10 + i])
            self._members.append(extra.net)
        return self._members[:m]

    def fit(self, name):
        if name not in self._fits:
            net, tr, dc = self.pretrained.net, self.data.train, self.cfg.detectors
            if name == "mahalanobis":
                self._fits[name] = det.fit_mahalanobis(net, tr.features, tr.labels, tr.num_classes,
                                                       dc.mahalanobis_ridge)
            elif name == "ra":
                self._fits[name] = det.fit_ra_threshold(net, tr.features, dc.ra_percentile)
            elif name == "knn":
                self._fits[name] = det.fit_knn(net, tr.features)
            elif name == "feature_scale":
                self._fits[name] = tr.features.std(axis=0)
            else:
                raise KeyError(name)
        return self._fits[name]

    def score(self, name, X, **kw):
        """Scores of detector ``name`` (or an ablation arm) on rows ``X``."""
        net, dc = self.pretrained.net, self.cfg.detectors
        if name in ("msp", "D"):
            return det.msp_score(net, X)
        if name == "energy":
            return det.energy_score(net, X, dc.energy_temperature)
        if name == "odin":
            return det.odin_score(net, X, dc.odin_temperature, dc.odin_delta,
                                  feature_scale=self.fit("feature_scale"))
        if name == "mahalanobis":
            return det.mahalanobis_score(self.fit("mahalanobis"), net, X)
        if name == "ra":
            return det.ra_score(net, X, self.fit("ra"), dc.energy_temperature)
        if name == "knn":
            return det.knn_score(self.fit("knn"), net, X, dc.knn_k)
        if name == "ensemble":
            return det.ensemble_score(self.members(kw.get("m", dc.ensemble_size)), X)
        if name in ("drl", "D+C"):
            return det.drl_score(self.drl(kw.get("epsilon"), kw.get("sigma")), X)
        if name == "C":
            return np.max(softmax(distribution_rep(self.drl(), X)), axis=1)
        raise ValueError(f"unknown detector {name!r}")

    def probs(self, name, **kw):
        """ID-test class probabilities of the classifier behind a detector."""
        X = self.data.test.features
        if name == "ensemble":
            return det.ensemble_output(self.members(kw.get("m", self.cfg.detectors.ensemble_size)), X)
        if name in ("drl", "D+C"):
            return det.drl_output(self.drl(kw.get("epsilon"), kw.get("sigma")), X)
        if name == "C":
            return softmax(distribution_rep(self.drl(), X))
        return softmax(extract_rep(self.pretrained, X))

    def evaluate(self, name, label=None, **kw):
        id_scores = self.score(name, self.data.test.features, **kw)
        probs = self.probs(name, **kw)
        reports = []
        for set_name, ood in self.data.oods.items():
            ood_scores = self.score(name, ood.features, **kw)
            det.scored_samples(label or name, id_scores, ood_scores)  # finiteness check
            reports.append(evaluate(label or name, set_name, id_scores, ood_scores, probs,
                                    self.data.test.labels, seed=self.seed))
        return reports


@dataclass
class RunRecord:
    kind: str
    config_hash: str
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def mean(self, detector, dataset=None, metric="auroc"):
        """Mean of a metric over trials; averaged over datasets when ``dataset`` is None."""
        vals = [s[f"{metric}_mean"] for s in self.summary
                if s["detector"] == detector and (dataset is None or s["dataset"] == dataset)]
        if not vals:
            raise KeyError((detector, dataset))
        return float(np.mean(vals))


def summarize(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r.detector, r.dataset), []).append(r)
    out = []
    for (detector, dataset), rs in groups.items():
        row = {"detector": detector, "dataset": dataset, "n_trials": len(rs)}
        for m in METRIC_NAMES:
            vals = np.array([getattr(r, m) for r in rs])
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


SUMMARY_FIELDS = ["detector", "dataset", "n_trials"] + [f"{m}_{s}" for m in METRIC_NAMES
                                                         for s in ("mean", "std")]


def write_summary(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in summary:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_resolved(cfg, out):
    with open(os.path.join(out, "resolved.cfg"), "w", newline="\n") as fh:
        fh.write(config_mod.to_text(cfg))


def _finish(record, out):
    record.summary = summarize(record.rows)
    if out:
        write_metrics(record.rows, os.path.join(out, "metrics.csv"))
        write_summary(record.summary, os.path.join(out, "summary.csv"))
    return record


def _run(kind, cfg, out, body):
    """Run ``body(record)``; on failure flush whatever rows exist, then re-raise."""
    record = RunRecord(kind, cfg.hash())
    if out:
        os.makedirs(out, exist_ok=True)
        write_resolved(cfg, out)
    try:
        body(record)
    except Exception:
        if out:
            _finish(record, out)
            log.error("%s failed; %d partial rows written to %s", kind, len(record.rows), out)
        raise
    _finish(record, out)
    return record


def run_compare(cfg, out=None):
    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            for name in cfg.detectors.list:
                record.rows += trial.evaluate(name)
    record = _run("compare", cfg, out, body)
    if out:
        names = list(dict.fromkeys(r.detector for r in record.rows))
        emit_svg_plot(
            [Series(ds, names, [record.mean(n, ds) for n in names]) for ds in cfg.data.ood_sets],
            "bar", os.path.join(out, "compare.svg"),
            title="Detector comparison", xlabel="detector", ylabel="mean AUROC")
    return record


def eps_label(eps):
    return f"drl_eps={eps!r}"


def run_epsilon_sweep(cfg, out=None):
    grid = [float(e) for e in cfg.experiment.epsilon_grid]

    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            for eps in grid:
                record.rows += trial.evaluate("drl", eps_label(eps), epsilon=eps)
    record = _run("sweep-eps", cfg, out, body)
    if out:
        xs = list(range(len(grid)))
        emit_svg_plot(
            [Series(ds, xs, [record.mean(eps_label(e), ds) for e in grid]) for ds in cfg.data.ood_sets],
            "line", os.path.join(out, "eps_sweep.svg"), title="Effect of epsilon",
            xlabel="epsilon", ylabel="mean AUROC", xticks=[(i, f"{e:g}") for i, e in enumerate(grid)])
    return record


def sigma_label(kind):
    return f"drl_sigma={kind}"


def run_sigma_study(cfg, out=None):
    kinds = list(cfg.experiment.sigma_kinds)

    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            for kind in kinds:
                record.rows += trial.evaluate("drl", sigma_label(kind), sigma=kind)
    record = _run("sigma-study", cfg, out, body)
    bars = {k: record.mean(sigma_label(k)) for k in kinds}
    record.extras["bars"] = bars
    record.extras["spread"] = max(bars.values()) - min(bars.values())
    if out:
        with open(os.path.join(out, "sigma.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "mean_auroc"])
            for k, v in bars.items():
                w.writerow([k, repr(v)])
            w.writerow(["max-min", repr(record.extras["spread"])])
        emit_svg_plot([Series("mean AUROC", kinds, [bars[k] for k in kinds])], "bar",
                      os.path.join(out, "sigma_study.svg"), title="Effect of the component covariance",
                      xlabel="covariance", ylabel="AUROC averaged over OOD sets")
    return record


ABLATION_ARMS = ("D", "C", "D+C")
RELIABILITY_FIELDS = ["arm", "bin", "lower", "upper", "count", "confidence", "accuracy"]


def run_ablation(cfg, out=None):
    pooled = {arm: ([], []) for arm in ABLATION_ARMS}

    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            for arm in ABLATION_ARMS:
                record.rows += trial.evaluate(arm)
                probs = trial.probs(arm)
                pooled[arm][0].append(np.max(probs, axis=1))
                pooled[arm][1].append(np.argmax(probs, axis=1) == trial.data.test.labels)
    record = _run("ablate", cfg, out, body)
    record.extras["reliability"] = {
        arm: reliability_bins(np.concatenate(c), np.concatenate(k)) for arm, (c, k) in pooled.items()
    }
    if out:
        with open(os.path.join(out, "reliability.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RELIABILITY_FIELDS, lineterminator="\n")
            w.writeheader()
            for arm, rows in record.extras["reliability"].items():
                for r in rows:
                    w.writerow({"arm": arm, **{k: repr(v) if isinstance(v, float) else v
                                               for k, v in r.items()}})
        metrics = ["auroc", "accuracy", "ece"]
        emit_svg_plot(
            [Series(arm, [m.upper() if m != "accuracy" else "Accuracy" for m in metrics],
                    [record.mean(arm, metric=m) for m in metrics]) for arm in ABLATION_ARMS],
            "bar", os.path.join(out, "ablation.svg"), title="Ablation", xlabel="metric", ylabel="mean value")
    return record


def ensemble_label(m):
    return f"ensemble_M={m}"


def run_ensemble_compare(cfg, out=None):
    sizes = sorted(int(m) for m in cfg.experiment.ensemble_sizes)

    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            for m in sizes:
                record.rows += trial.evaluate("ensemble", ensemble_label(m), m=m)
            record.rows += trial.evaluate("drl")
    record = _run("ensemble", cfg, out, body)
    curve = [(m, record.mean(ensemble_label(m))) for m in sizes]
    record.extras["points"] = curve + [("drl", record.mean("drl"))]
    if out:
        emit_svg_plot(
            [Series("ensemble", [m for m, _ in curve], [v for _, v in curve]),
             Series("DRL (2 networks)", [2], [record.mean("drl")])],
            "line", os.path.join(out, "ensemble.svg"), title="Ensembles vs DRL",
            xlabel="number of networks", ylabel="AUROC averaged over OOD sets")
    return record


OFFSET_SCALES = (0.0, 0.5, 1.0, 2.0, 4.0)


def offset_label(scale):
    return f"offset={scale!r}"


def run_offset_sweep(cfg, out=None, kind="shifted-blob", scales=OFFSET_SCALES):
    """Near-to-far sweep: every configured detector against one OOD kind at
    offsets ``scale * spread``. Rows use the offset as the dataset name."""
    spread = cfg.data.spread if cfg.data.generator == "blobs" else None

    def body(record):
        for seed in cfg.trial_seeds():
            trial = Trial(cfg, seed)
            ref = trial.data.full
            unit = spread if spread is not None else ref.meta["spread"]
            trial.data.oods = {
                offset_label(s): datagen.gen_ood(kind, ref, cfg.data.n_ood, [seed, 200 + j], offset=s * unit)
                for j, s in enumerate(scales)
            }
            for name in cfg.detectors.list:
                record.rows += trial.evaluate(name)
    record = _run("offset-sweep", cfg, out, body)
    if out:
        names = list(dict.fromkeys(r.detector for r in record.rows))
        xs = list(range(len(scales)))
        emit_svg_plot(
            [Series(n, xs, [record.mean(n, offset_label(s)) for s in scales]) for n in names],
            "line", os.path.join(out, "offset_sweep.svg"), title=f"Near to far OOD ({kind})",
            xlabel="offset (spreads)", ylabel="mean AUROC", xticks=[(i, f"{s:g}") for i, s in enumerate(scales)])
    return record


EXPERIMENTS = {
    "compare": run_compare,
    "sweep-eps": run_epsilon_sweep,
    "sigma-study": run_sigma_study,
    "ablate": run_ablation,
    "ensemble": run_ensemble_compare,
    "offset-sweep": run_offset_sweep,
}

__all__ = [
    "EXPERIMENTS", "METRIC_FIELDS", "RunRecord", "Trial", "TrialData", "make_trial_data",
    "run_ablation", "run_compare", "run_ensemble_compare", "run_epsilon_sweep", "run_offset_sweep",
    "run_sigma_study",
    "summarize",
]
