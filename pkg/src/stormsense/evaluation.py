"""Classification metrics, permutation feature importance, and CSV exports.

Micro-averaged precision, recall, and F1 are computed from explicitly pooled
true/false positive counts; on single-label multiclass data they all collapse
to accuracy, and the test suite asserts that identity rather than assuming
it. Feature importance is measured model-agnostically: shuffle one feature
column across the evaluation set and record the micro-F1 drop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .classifier import CATEGORIES
from .features import batch_statistics
from .training import JointConfig, JointModels, TrainInstance, slot_sentiment_pairs


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true labels, columns predicted; cell sums count instances."""

    counts: np.ndarray
    labels: tuple = CATEGORIES

    def total(self) -> int:
        return int(self.counts.sum())


def _label_indices(values, k: int, side: str) -> np.ndarray:
    out = np.empty(len(values), dtype=np.intp)
    for i, v in enumerate(values):
        if isinstance(v, str):
            if v not in CATEGORIES[:k]:
                raise ValueError(f"unknown {side} label {v!r}")
            out[i] = CATEGORIES.index(v)
        else:
            out[i] = int(v)
            if not 0 <= out[i] < k:
                raise ValueError(f"{side} label {v} out of range for k={k}")
    return out


def confusion(true_labels: Sequence, predicted_labels: Sequence,
              k: int = len(CATEGORIES)) -> ConfusionMatrix:
    """Count matrix with counts[i][j] = #{true=i, predicted=j}.

    Labels may be indices or category names; the two sequences must have
    equal length. Empty input gives the zero matrix.
    """
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"length mismatch: {len(true_labels)} true labels vs "
            f"{len(predicted_labels)} predictions")
    t = _label_indices(true_labels, k, "true")
    p = _label_indices(predicted_labels, k, "predicted")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts=counts, labels=CATEGORIES[:k])


@dataclass(frozen=True)
class PerClass:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision_micro: float
    recall_micro: float
    f1_micro: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    per_class: tuple


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus micro and macro precision/recall/F1 from pooled counts.

    Micro values come from summed per-class true/false positives and false
    negatives; every 0/0 ratio is reported as 0.
    """
    counts = cm.counts
    total = cm.total()
    if total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    k = counts.shape[0]
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp

    per_class = []
    for i in range(k):
        precision = _ratio(tp[i], tp[i] + fp[i])
        recall = _ratio(tp[i], tp[i] + fn[i])
        f1 = _ratio(2.0 * precision * recall, precision + recall)
        per_class.append(PerClass(label=cm.labels[i], precision=precision,
                                  recall=recall, f1=f1,
                                  support=int(counts[i].sum())))

    micro_p = _ratio(tp.sum(), tp.sum() + fp.sum())
    micro_r = _ratio(tp.sum(), tp.sum() + fn.sum())
    micro_f1 = _ratio(2.0 * micro_p * micro_r, micro_p + micro_r)
    return MetricsReport(
        accuracy=float(tp.sum()) / total,
        precision_micro=micro_p, recall_micro=micro_r, f1_micro=micro_f1,
        precision_macro=float(np.mean([c.precision for c in per_class])),
        recall_macro=float(np.mean([c.recall for c in per_class])),
        f1_macro=float(np.mean([c.f1 for c in per_class])),
        per_class=tuple(per_class))


def micro_f1(true_idx: Sequence, pred_idx: Sequence,
             k: int = len(CATEGORIES)) -> float:
    return metrics(confusion(true_idx, pred_idx, k)).f1_micro


@dataclass(frozen=True)
class ImportanceResult:
    feature_index: int
    mean_drop: float
    std_drop: float
    drops: tuple


def permutation_importance(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    features: np.ndarray,
    labels: Sequence,
    feature_index: int,
    repeats: int = 10,
    seed: int = 0,
    k: int = len(CATEGORIES),
) -> ImportanceResult:
    """Mean micro-F1 drop when one feature column is shuffled.

    ``predict_fn`` maps a feature matrix to predicted label indices. Each
    repeat shuffles the column with a seeded generator and re-scores; the
    drop is baseline F1 minus permuted F1, so useless columns score near 0.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be a matrix, got shape {features.shape}")
    if not 0 <= feature_index < features.shape[1]:
        raise IndexError(
            f"feature index {feature_index} out of range for "
            f"{features.shape[1]} features")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    truth = _label_indices(labels, k, "true")
    baseline = micro_f1(truth, np.asarray(predict_fn(features), dtype=np.intp), k)
    rng = np.random.default_rng(seed)
    drops = []
    for _ in range(repeats):
        shuffled = features.copy()
        shuffled[:, feature_index] = rng.permutation(shuffled[:, feature_index])
        score = micro_f1(truth, np.asarray(predict_fn(shuffled), dtype=np.intp), k)
        drops.append(baseline - score)
    drops_arr = np.asarray(drops)
    return ImportanceResult(feature_index=feature_index,
                            mean_drop=float(drops_arr.mean()),
                            std_drop=float(drops_arr.std()),
                            drops=tuple(drops))


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

def export_metrics(report: MetricsReport, path) -> None:
    """Long-format metric,value CSV; float values written as repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["accuracy", repr(report.accuracy)])
        for scope in ("micro", "macro"):
            for stat in ("precision", "recall", "f1"):
                name = f"{stat}_{scope}"
                writer.writerow([name, repr(getattr(report, name))])
        for c in report.per_class:
            writer.writerow([f"precision_{c.label}", repr(c.precision)])
            writer.writerow([f"recall_{c.label}", repr(c.recall)])
            writer.writerow([f"f1_{c.label}", repr(c.f1)])
            writer.writerow([f"support_{c.label}", str(c.support)])


def export_confusion(cm: ConfusionMatrix, path) -> None:
    """Square CSV: header of predicted labels, one row per true label."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true\\predicted", *cm.labels])
        for i, label in enumerate(cm.labels):
            writer.writerow([label, *[int(v) for v in cm.counts[i]]])


@dataclass(frozen=True)
class TimeseriesRow:
    """One evaluated slot: labels plus the tweet-derived quantities."""

    timestamp: float
    true_label: str
    predicted_label: str
    c: float
    v_neg: float
    v_pos: float
    mean_sentiment: float


def timeseries_rows(
    instances: Sequence[TrainInstance],
    predictions: Sequence[int],
    models: JointModels,
    cfg: JointConfig,
) -> list[TimeseriesRow]:
    """Per-slot export rows; slots without tweets carry zero statistics.

    ``mean_sentiment`` is the slot's average positive probability (0 when the
    slot has no tweets or the mode uses no extractor).
    """
    if len(instances) != len(predictions):
        raise ValueError(f"{len(instances)} instances vs "
                         f"{len(predictions)} predictions")
    rows = []
    for inst, pred in zip(instances, predictions):
        pairs = slot_sentiment_pairs(inst, models) \
            if cfg.mode == "joint" else np.zeros((0, 2))
        stats = batch_statistics(pairs, hard_labels=cfg.hard_labels)
        mean_sent = float(pairs[:, 1].mean()) if len(pairs) else 0.0
        rows.append(TimeseriesRow(
            timestamp=inst.timestamp,
            true_label=CATEGORIES[inst.label_index],
            predicted_label=CATEGORIES[int(pred)],
            c=stats.c, v_neg=stats.v_neg, v_pos=stats.v_pos,
            mean_sentiment=mean_sent))
    return rows


def export_timeseries(rows: Sequence[TimeseriesRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "true", "predicted", "c",
                         "v_neg", "v_pos", "mean_sentiment"])
        for r in rows:
            writer.writerow([repr(r.timestamp), r.true_label, r.predicted_label,
                             repr(r.c), repr(r.v_neg), repr(r.v_pos),
                             repr(r.mean_sentiment)])


def read_timeseries(path) -> list[TimeseriesRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [TimeseriesRow(timestamp=float(r["timestamp"]),
                              true_label=r["true"],
                              predicted_label=r["predicted"],
                              c=float(r["c"]), v_neg=float(r["v_neg"]),
                              v_pos=float(r["v_pos"]),
                              mean_sentiment=float(r["mean_sentiment"]))
                for r in reader]
