"""Confusion matrix, IoU and accuracy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lidar_io import IGNORE


@dataclass
class Evaluation:
    confusion: np.ndarray  # rows: ground truth, cols: prediction
    iou: np.ndarray  # NaN where TP+FP+FN == 0
    miou: float  # NaN when no class has a defined IoU
    accuracy: float  # NaN when nothing was evaluated

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def confusion_matrix(preds, labels, n_classes: int, ignore: int = IGNORE) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    keep = labels != ignore
    p, t = preds[keep], labels[keep]
    if np.any((t < 0) | (t >= n_classes)) or np.any((p < 0) | (p >= n_classes)):
        raise ValueError("class index outside [0, n_classes)")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def scores(confusion: np.ndarray) -> Evaluation:
    confusion = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(confusion).astype(np.float64)
    denom = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    defined = denom > 0
    # correctly rounded sum, independent of class order
    miou = math.fsum(iou[defined]) / int(defined.sum()) if defined.any() else float("nan")
    total = confusion.sum()
    acc = float(tp.sum() / total) if total else float("nan")
    return Evaluation(confusion, iou, miou, acc)


def evaluate(preds, labels, n_classes: int, ignore: int = IGNORE) -> Evaluation:
    """Confusion matrix, per-class IoU, mIoU over classes with a non-zero
    denominator, and overall accuracy."""
    return scores(confusion_matrix(preds, labels, n_classes, ignore))
