#!/usr/bin/env python3
"""
Downstream metrics: accuracy, ROC-AUC by exact pair counting, confusion matrix
"""

from typing import Dict, List

import numpy as np

from .errors import DimensionError, UndefinedMetricError

METRICS = ("accuracy", "roc_auc")


def _predictions(scores: np.ndarray) -> np.ndarray:
    if scores.ndim == 2:
        return np.argmax(scores, axis=1)
    return (scores >= 0.5).astype(np.int64)


def accuracy(scores, labels) -> float:
    """Argmax (or 0.5-threshold for 1-D scores) match rate"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.shape[0] != labels.shape[0]:
        raise DimensionError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if labels.size == 0:
        raise UndefinedMetricError("accuracy of an empty split")
    return float(np.mean(_predictions(scores) == labels))


def roc_auc(scores, labels) -> float:
    """
    P(score_pos > score_neg) + 0.5 * P(tie) over all positive/negative pairs

    Args:
        scores: Scores [n]
        labels: Binary labels [n]

    Returns:
        Area under the ROC curve
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores for {labels.size} labels")
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("ROC-AUC needs both positive and negative labels")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def multiclass_roc_auc(probs, labels) -> float:
    """Binary AUC on class 1 for two columns, macro one-vs-rest otherwise"""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if probs.ndim == 1:
        return roc_auc(probs, labels)
    if probs.shape[1] == 2:
        return roc_auc(probs[:, 1], labels)
    aucs = []
    for c in range(probs.shape[1]):
        positive = labels == c
        if positive.any() and not positive.all():
            aucs.append(roc_auc(probs[:, c], positive.astype(np.int64)))
    if not aucs:
        raise UndefinedMetricError("ROC-AUC undefined: every class is absent or universal")
    return float(np.mean(aucs))


def confusion_matrix(scores, labels, num_classes: int) -> List[List[int]]:
    """Rows are true classes, columns predictions"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (labels, _predictions(scores)), 1)
    return matrix.tolist()


def evaluate(kind: str, scores, labels) -> float:
    """Dispatch by metric name"""
    if kind == "accuracy":
        return accuracy(scores, labels)
    if kind == "roc_auc":
        return float(multiclass_roc_auc(scores, labels))
    raise UndefinedMetricError(f"unknown metric '{kind}', expected one of {METRICS}")


def metric_report(kind: str, scores, labels, num_classes: int) -> Dict:
    """Metric value plus the confusion matrix"""
    return {
        "metric": kind,
        "value": evaluate(kind, scores, labels),
        "confusion_matrix": confusion_matrix(scores, labels, num_classes),
    }
