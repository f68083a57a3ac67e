import numpy as np
import pytest

from graphbridge.errors import DimensionError, UndefinedMetricError
from graphbridge.metrics import accuracy, confusion_matrix, evaluate, metric_report, multiclass_roc_auc, roc_auc


def _brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def test_roc_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
    assert roc_auc([0.9, 0.8], [0, 1]) == 0.0


def test_roc_auc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 20))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 5, size=n) / 4.0
        assert roc_auc(scores, labels) == pytest.approx(_brute_auc(scores, labels), abs=1e-12)


def test_roc_auc_agrees_with_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(1)
    for _ in range(50):
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        scores = rng.normal(size=40)
        assert roc_auc(scores, labels) == pytest.approx(metrics.roc_auc_score(labels, scores), abs=1e-12)


def test_roc_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.2, 0.4], [1, 1])
    with pytest.raises(DimensionError):
        roc_auc([0.2, 0.4], [1])


def test_multiclass_auc():
    probs = np.eye(3)[[0, 1, 2, 0]]
    assert multiclass_roc_auc(probs, [0, 1, 2, 0]) == 1.0
    two = np.array([[0.8, 0.2], [0.3, 0.7]])
    assert multiclass_roc_auc(two, [0, 1]) == 1.0
    with pytest.raises(UndefinedMetricError):
        multiclass_roc_auc(np.full((2, 3), 1 / 3), [1, 1])


def test_accuracy():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    assert accuracy(scores, [0, 1, 1]) == pytest.approx(2 / 3)
    assert accuracy([0.7, 0.2], [1, 0]) == 1.0
    with pytest.raises(UndefinedMetricError):
        accuracy(np.zeros((0, 2)), [])


def test_confusion_matrix_and_report():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    assert confusion_matrix(scores, [0, 1, 1], 2) == [[1, 0], [1, 1]]
    report = metric_report("accuracy", scores, [0, 1, 1], 2)
    assert report["metric"] == "accuracy"
    assert report["value"] == pytest.approx(2 / 3)


def test_unknown_metric():
    with pytest.raises(UndefinedMetricError):
        evaluate("f1", [0.1], [0])
