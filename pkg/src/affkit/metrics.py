"""Segmentation metrics over label maps with an implicit background of -1."""

from __future__ import annotations

import numpy as np

from .errors import EmptyGroundTruth, ShapeMismatch

BACKGROUND = -1


def _counts(pred, gt, num_labels):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    counts = np.zeros((num_labels, 3), dtype=np.int64)  # TP, FP, FN per label
    for label in range(num_labels):
        p = pred == label
        g = gt == label
        counts[label, 0] = np.count_nonzero(p & g)
        counts[label, 1] = np.count_nonzero(p & ~g)
        counts[label, 2] = np.count_nonzero(~p & g)
    fg = gt != BACKGROUND
    correct = np.count_nonzero(fg & (pred == gt))
    return counts, correct, int(np.count_nonzero(fg))


def compute_metrics(pred, gt, num_labels):
    """(mean IoU, mean F1, foreground accuracy), averaged over labels in gt."""
    counts, correct, fg_total = _counts(pred, gt, num_labels)
    present = [l for l in range(num_labels) if counts[l, 0] + counts[l, 2] > 0]
    if not present:
        raise EmptyGroundTruth("no foreground labels in ground truth")
    ious, f1s = [], []
    for l in present:
        tp, fp, fn = counts[l]
        ious.append(tp / (tp + fp + fn))
        f1s.append(2 * tp / (2 * tp + fp + fn))
    acc = correct / fg_total
    return float(np.mean(ious)), float(np.mean(f1s)), float(acc)


class ConfusionAccumulator:
    """Per-label TP/FP/FN/TN pixel counts with associative merge."""

    def __init__(self, num_labels: int, counts=None):
        self.num_labels = num_labels
        self.counts = (
            np.zeros((num_labels, 4), dtype=np.int64) if counts is None else counts
        )

    def add(self, pred, gt):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
        total = pred.size
        for label in range(self.num_labels):
            p = pred == label
            g = gt == label
            tp = np.count_nonzero(p & g)
            fp = np.count_nonzero(p & ~g)
            fn = np.count_nonzero(~p & g)
            self.counts[label] += (tp, fp, fn, total - tp - fp - fn)

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_labels != self.num_labels:
            raise ValueError("label-count mismatch")
        return ConfusionAccumulator(self.num_labels, self.counts + other.counts)

    def iou(self, label: int) -> float:
        tp, fp, fn, _ = self.counts[label]
        denom = tp + fp + fn
        return float(tp / denom) if denom else 0.0

    def f1(self, label: int) -> float:
        tp, fp, fn, _ = self.counts[label]
        denom = 2 * tp + fp + fn
        return float(2 * tp / denom) if denom else 0.0


class MetricAccumulator:
    """Macro (per-image) averaging of (mIoU, F1, Acc) across a dataset."""

    def __init__(self, num_labels: int):
        self.num_labels = num_labels
        self.rows: list[tuple[float, float, float]] = []

    def add(self, pred, gt):
        self.rows.append(compute_metrics(pred, gt, self.num_labels))

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        if other.num_labels != self.num_labels:
            raise ValueError("label-count mismatch")
        out = MetricAccumulator(self.num_labels)
        out.rows = self.rows + other.rows
        return out

    def summary(self):
        if not self.rows:
            raise EmptyGroundTruth("no images accumulated")
        arr = np.asarray(self.rows, dtype=np.float64)
        mean = arr.mean(axis=0)
        return {"miou": float(mean[0]), "f1": float(mean[1]), "acc": float(mean[2]),
                "images": len(self.rows)}
