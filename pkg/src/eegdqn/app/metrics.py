"""Confusion-matrix metrics."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidParameterError

__all__ = ["confusion_matrix", "compute_metrics", "summarize_folds"]


def confusion_matrix(true_labels, predicted, n_classes):
    """Rows are true classes, columns predictions."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.shape != p.shape:
        raise InvalidParameterError(f"length mismatch: {len(t)} labels vs {len(p)} predictions")
    if len(t) and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise InvalidParameterError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _safe_div(a, b):
    return np.divide(a, b, out=np.zeros_like(a, dtype=np.float64), where=b != 0)


def compute_metrics(true_labels, predicted, n_classes=None):
    """Accuracy plus unweighted macro precision, recall and F1.

    Per-class precision or recall of ``0/0`` counts as 0, and so does F1 when
    both are 0.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(t.max(initial=0), p.max(initial=0))) + 1
    cm = confusion_matrix(t, p, n_classes)
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0).astype(np.float64))
    recall = _safe_div(tp, cm.sum(axis=1).astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = cm.sum()
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "precision_macro": float(precision.mean()),
        "recall_macro": float(recall.mean()),
        "f1_macro": float(f1.mean()),
        "precision_per_class": precision.tolist(),
        "recall_per_class": recall.tolist(),
        "f1_per_class": f1.tolist(),
        "support": cm.sum(axis=1).tolist(),
        "confusion_matrix": cm.tolist(),
    }


def summarize_folds(rows, keys=("accuracy", "precision_macro", "recall_macro", "f1_macro",
                                "reward_based_accuracy")):
    """Mean and population standard deviation of each metric across folds."""
    out = {}
    for key in keys:
        vals = np.array([r[key] for r in rows if key in r], dtype=np.float64)
        if len(vals):
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std()),
                        "values": vals.tolist()}
    return out
