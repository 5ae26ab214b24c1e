"""Evaluation metrics: argmax accuracy and rank-based ROC-AUC.

Binary tasks report ROC-AUC with the Mann-Whitney tie convention (each
tied pair contributes one half); multiclass tasks report accuracy.
"""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def accuracy(logits, labels):
    preds = np.asarray(logits).argmax(axis=1)
    labels = np.asarray(labels)
    return float((preds == labels).mean())


def roc_auc(scores, labels):
    """P(score of a random positive > score of a random negative), ties 0.5.

    Computed via average ranks, which is arithmetic-identical to counting
    all positive/negative pairs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes present in the split")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))  # average 1-based rank
        i = j + 1
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def positive_scores(logits):
    """Positive-class probability from binary logits, for ROC-AUC."""
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return p[:, 1]


def split_metric(logits, labels, num_classes):
    """The dataset's headline metric: ROC-AUC when binary, else accuracy."""
    if num_classes == 2:
        return roc_auc(positive_scores(logits), labels)
    return accuracy(logits, labels)


def metric_name(num_classes):
    return "roc_auc" if num_classes == 2 else "accuracy"
