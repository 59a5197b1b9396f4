"""Confusion matrices and precision / recall / F1 summaries."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import LabelOutOfRange


def confusion(preds, labels, n_classes):
    """Counts ``M[true, predicted]``."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    fold: int = None

    def as_row(self):
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def metrics(cm, fold=None):
    """Accuracy plus macro (unweighted class mean) and support-weighted
    precision, recall and F1.

    A class with an empty row or column gets 0 for the undefined ratio and is
    listed in ``degenerate``.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    precision = _safe_div(tp, col)
    recall = _safe_div(tp, row)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    support = _safe_div(row, np.full_like(row, total))
    degenerate = [int(c) for c in np.flatnonzero((col == 0) | (row == 0))]
    return MetricsReport(
        accuracy=float(tp.sum() / total) if total else 0.0,
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        weighted_precision=float((precision * support).sum()),
        weighted_recall=float((recall * support).sum()),
        weighted_f1=float((f1 * support).sum()),
        per_class=[(float(p), float(r), float(f)) for p, r, f in zip(precision, recall, f1)],
        degenerate=degenerate,
        fold=fold,
    )
