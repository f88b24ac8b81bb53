"""Confusion-matrix segmentation metrics: per-class IoU, mean IoU, global accuracy."""
from __future__ import annotations

import numpy as np

IGNORE_LABEL = 255


class MetricsError(ValueError):
    pass


class ConfusionMatrix:
    """K x K pixel counts; entry (g, p) counts ground truth ``g`` predicted as ``p``."""

    def __init__(self, num_classes: int, ignore_label: int | None = IGNORE_LABEL):
        if num_classes < 1:
            raise MetricsError("need at least one class")
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, truth, pred) -> "ConfusionMatrix":
        truth = np.asarray(truth)
        pred = np.asarray(pred)
        if truth.shape != pred.shape:
            raise MetricsError(f"label map shapes differ: {truth.shape} vs {pred.shape}")
        t = truth.astype(np.int64).ravel()
        p = pred.astype(np.int64).ravel()
        keep = np.ones(t.shape, dtype=bool) if self.ignore_label is None else t != self.ignore_label
        t, p = t[keep], p[keep]
        k = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
            raise MetricsError(f"labels must lie in [0, {k}) or equal the ignore label")
        self.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise MetricsError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.num_classes, self.ignore_label)
        out.counts = self.counts + other.counts
        return out

    @classmethod
    def from_counts(cls, counts, ignore_label: int | None = IGNORE_LABEL) -> "ConfusionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or np.any(counts < 0):
            raise MetricsError("counts must be a square non-negative matrix")
        cm = cls(counts.shape[0], ignore_label)
        cm.counts = counts.copy()
        return cm


def accumulate(cm: ConfusionMatrix, truth, pred) -> ConfusionMatrix:
    return cm.accumulate(truth, pred)


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """IoU for each class; NaN where the class is absent from both truth and prediction."""
    counts = cm.counts.astype(np.float64)
    inter = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - inter
    out = np.full(cm.num_classes, np.nan)
    defined = union > 0
    out[defined] = inter[defined] / union[defined]
    return out


def mean_iou(cm: ConfusionMatrix) -> float:
    iou = iou_per_class(cm)
    if np.all(np.isnan(iou)):
        raise MetricsError("mean IoU undefined: no class appears in truth or prediction")
    return float(np.nanmean(iou))


def global_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise MetricsError("global accuracy undefined: no scored pixels")
    return float(np.trace(cm.counts) / total)


def format_table(cm: ConfusionMatrix, class_names=None) -> str:
    names = list(class_names) if class_names else [f"class {k}" for k in range(cm.num_classes)]
    width = max(len(n) for n in names + ["Global accuracy"])
    lines = [f"{'Class':<{width}}  {'IoU':>8}"]
    for name, v in zip(names, iou_per_class(cm)):
        lines.append(f"{name:<{width}}  {'n/a' if np.isnan(v) else f'{100 * v:.1f}%':>8}")
    lines.append(f"{'Mean IoU':<{width}}  {100 * mean_iou(cm):>7.1f}%")
    lines.append(f"{'Global accuracy':<{width}}  {100 * global_accuracy(cm):>7.2f}%")
    return "\n".join(lines)


def metrics_csv(cm: ConfusionMatrix, class_names=None) -> str:
    names = list(class_names) if class_names else [f"class{k}" for k in range(cm.num_classes)]
    rows = ["class,iou"]
    for name, v in zip(names, iou_per_class(cm)):
        rows.append(f"{name},{'' if np.isnan(v) else f'{v:.6f}'}")
    rows.append(f"mean_iou,{mean_iou(cm):.6f}")
    rows.append(f"global_accuracy,{global_accuracy(cm):.6f}")
    return "\n".join(rows) + "\n"
