"""Segmentation metrics from a pixel-level confusion matrix."""

from __future__ import annotations

import numpy as np

__all__ = ["ConfusionMatrix"]


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are predictions.

    Per-class IoU is TP/(TP+FP+FN), NaN when a class appears in neither
    truth nor prediction. The mean IoU averages the defined content classes
    only; the background/void id is always excluded.
    """

    def __init__(self, num_classes: int, background: int = 0):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.num_classes = num_classes
        self.background = background
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, truth: np.ndarray, pred: np.ndarray) -> None:
        truth = np.asarray(truth).ravel()
        pred = np.asarray(pred).ravel()
        if truth.shape != pred.shape:
            raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
        k = self.num_classes
        for name, arr in (("truth", truth), ("prediction", pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise ValueError(f"{name} contains ids outside [0, {k})")
        flat = k * truth.astype(np.int64) + pred.astype(np.int64)
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise ValueError("class count mismatch")
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else float("nan")

    def per_class_iou(self) -> np.ndarray:
        """IoU per class id; NaN where TP+FP+FN is zero."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        denom = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = tp / denom
        iou[denom == 0] = np.nan
        return iou

    def mean_iou(self) -> float:
        """Mean over defined content classes (background excluded)."""
        iou = self.per_class_iou()
        content = np.ones(self.num_classes, dtype=bool)
        content[self.background] = False
        defined = content & ~np.isnan(iou)
        if not defined.any():
            return float("nan")
        return float(iou[defined].mean())
