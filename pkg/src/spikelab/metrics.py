"""Shared evaluation metrics."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def balanced_accuracy(predictions, truths) -> float:
    """(TPR + TNR) / 2 over boolean membership vectors."""
    preds = np.asarray(predictions, dtype=bool)
    truths = np.asarray(truths, dtype=bool)
    if preds.shape != truths.shape:
        raise ValidationError("predictions/truths length mismatch")
    pos = truths.sum()
    neg = (~truths).sum()
    if pos == 0 or neg == 0:
        raise ValidationError("balanced accuracy needs both classes present")
    tpr = float((preds & truths).sum()) / pos
    tnr = float((~preds & ~truths).sum()) / neg
    return (tpr + tnr) / 2.0


def _average_ranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0   # 1-based average rank
        i = j + 1
    return ranks


def spearman_rank(xs, ys) -> float:
    """Spearman correlation with average-rank tie handling."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if len(xs) != len(ys) or len(xs) < 3:
        raise ValidationError("spearman_rank needs >= 3 paired points")
    rx, ry = _average_ranks(xs), _average_ranks(ys)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)
