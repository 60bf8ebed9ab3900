"""OOD detection and calibration metrics.

Scores follow the package convention: higher means more ID-like, and ID is
the positive class.
"""
from dataclasses import asdict, dataclass
import csv

import numpy as np
from scipy.stats import rankdata

ECE_BINS = 20
TPR_TARGET_PERCENT = 95


@dataclass
class MetricsReport:
    detector: str
    dataset: str
    auroc: float
    fpr95: float
    detection: float
    accuracy: float
    ece: float
    n_id: int
    n_ood: int
    seed: int = None

    def __post_init__(self):
        for name in ("auroc", "fpr95", "detection", "accuracy", "ece"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_row(self):
        return asdict(self)


METRIC_FIELDS = ["detector", "dataset", "auroc", "fpr95", "detection", "accuracy", "ece",
                 "n_id", "n_ood", "seed"]


def _check(id_scores, ood_scores):
    id_scores = np.asarray(id_scores, dtype=np.float64).ravel()
    ood_scores = np.asarray(ood_scores, dtype=np.float64).ravel()
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("need at least one ID and one OOD score")
    if not (np.all(np.isfinite(id_scores)) and np.all(np.isfinite(ood_scores))):
        raise ValueError("scores must be finite")
    return id_scores, ood_scores


def split_scored(samples):
    """(ID scores, OOD scores) from a list of ScoredSample."""
    id_s = [s.score for s in samples if not s.is_ood]
    ood_s = [s.score for s in samples if s.is_ood]
    return np.array(id_s), np.array(ood_s)


def auroc(id_scores, ood_scores):
    """Mann-Whitney estimate of P(ID score > OOD score), ties counted half."""
    id_scores, ood_scores = _check(id_scores, ood_scores)
    n1, n2 = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]), method="average")
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def tpr95_threshold(id_scores):
    """Largest threshold that still declares at least 95% of ID scores as ID."""
    s = np.sort(np.asarray(id_scores, dtype=np.float64))[::-1]
    needed = -(-TPR_TARGET_PERCENT * s.size // 100)  # ceil without float rounding
    return float(s[needed - 1])


def _rates(id_scores, ood_scores):
    tau = tpr95_threshold(id_scores)
    tpr = np.count_nonzero(id_scores >= tau) / id_scores.size
    fpr = np.count_nonzero(ood_scores >= tau) / ood_scores.size
    return tau, tpr, fpr


def fpr_at_95_tpr(id_scores, ood_scores):
    id_scores, ood_scores = _check(id_scores, ood_scores)
    return float(_rates(id_scores, ood_scores)[2])


def detection_error(id_scores, ood_scores):
    """Equal-prior error ``0.5 (1 - TPR) + 0.5 FPR`` at the FPR95 threshold."""
    id_scores, ood_scores = _check(id_scores, ood_scores)
    _, tpr, fpr = _rates(id_scores, ood_scores)
    return float(0.5 * (1.0 - tpr) + 0.5 * fpr)


def bin_index(confidences, n_bins=ECE_BINS):
    """Equal-width bins on [0, 1], right-inclusive; 0 falls into the first bin."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.searchsorted(edges, confidences, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


def reliability_bins(confidences, correct, n_bins=ECE_BINS):
    """Per-bin rows: lower, upper, count, mean confidence, accuracy (0 when empty)."""
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=np.float64).ravel()
    if conf.size != corr.size:
        raise ValueError("confidences and correctness flags differ in length")
    if conf.size == 0:
        raise ValueError("need at least one sample")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=corr, minlength=n_bins)
    nz = np.maximum(counts, 1)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return [
        {"bin": b, "lower": edges[b], "upper": edges[b + 1], "count": int(counts[b]),
         "confidence": conf_sum[b] / nz[b], "accuracy": acc_sum[b] / nz[b]}
        for b in range(n_bins)
    ]


def ece(confidences, correct, n_bins=ECE_BINS):
    rows = reliability_bins(confidences, correct, n_bins)
    n = sum(r["count"] for r in rows)
    return float(sum(r["count"] / n * abs(r["accuracy"] - r["confidence"]) for r in rows))


def accuracy(predictions, labels):
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.size != labels.size:
        raise ValueError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.mean(predictions == labels))


def evaluate(detector, dataset, id_scores, ood_scores, probs, labels, seed=None):
    """Full report; ``probs`` are the classifier's ID-test class probabilities."""
    probs = np.atleast_2d(probs)
    pred = np.argmax(probs, axis=1)
    return MetricsReport(
        detector=detector,
        dataset=dataset,
        auroc=auroc(id_scores, ood_scores),
        fpr95=fpr_at_95_tpr(id_scores, ood_scores),
        detection=detection_error(id_scores, ood_scores),
        accuracy=accuracy(pred, labels),
        ece=ece(np.max(probs, axis=1), pred == np.asarray(labels)),
        n_id=len(id_scores),
        n_ood=len(ood_scores),
        seed=seed,
    )


def write_metrics(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            row = r.as_row()
            for k in ("auroc", "fpr95", "detection", "accuracy", "ece"):
                row[k] = repr(float(row[k]))
            row["seed"] = "" if row["seed"] is None else row["seed"]
            w.writerow(row)


def read_metrics(path):
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(MetricsReport(
                row["detector"], row["dataset"],
                *(float(row[k]) for k in ("auroc", "fpr95", "detection", "accuracy", "ece")),
                int(row["n_id"]), int(row["n_ood"]),
                int(row["seed"]) if row["seed"] else None,
            ))
        return out
