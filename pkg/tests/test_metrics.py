import math

import numpy as np
import pytest

from prunebench.metrics import (ConfusionMatrix, MetricsError, format_table, global_accuracy, iou_per_class,
                                mean_iou, metrics_csv)


def test_perfect_prediction(rng):
    t = rng.integers(0, 3, (2, 5, 5))
    cm = ConfusionMatrix(3).accumulate(t, t)
    assert mean_iou(cm) == 1.0 and global_accuracy(cm) == 1.0


def test_two_class_counts():
    cm = ConfusionMatrix.from_counts([[3, 1], [2, 4]])
    assert np.allclose(iou_per_class(cm), [3 / 6, 4 / 7])
    assert math.isclose(global_accuracy(cm), 0.7)
    assert math.isclose(mean_iou(cm), (0.5 + 4 / 7) / 2)


def test_rows_are_truth():
    cm = ConfusionMatrix(2).accumulate(np.array([[0, 0, 1]]), np.array([[0, 1, 1]]))
    assert cm.counts.tolist() == [[1, 1], [0, 1]]


def test_majority_class_hides_failure():
    truth = np.array([[0] * 18 + [1] * 2])
    pred = np.zeros_like(truth)
    cm = ConfusionMatrix(2).accumulate(truth, pred)
    assert global_accuracy(cm) == 0.9
    assert mean_iou(cm) == 0.45


def test_ignore_label_skipped():
    truth = np.array([[0, 255, 1, 255]])
    pred = np.array([[0, 1, 1, 0]])
    cm = ConfusionMatrix(2).accumulate(truth, pred)
    assert cm.total == 2 and mean_iou(cm) == 1.0


def test_absent_class_is_nan():
    cm = ConfusionMatrix(3).accumulate(np.array([[0, 1]]), np.array([[0, 1]]))
    iou = iou_per_class(cm)
    assert math.isnan(iou[2]) and mean_iou(cm) == 1.0


def test_permutation_invariance(rng):
    t = rng.integers(0, 4, (3, 6, 6))
    p = rng.integers(0, 4, (3, 6, 6))
    perm = np.array([2, 0, 3, 1])
    a = ConfusionMatrix(4).accumulate(t, p)
    b = ConfusionMatrix(4).accumulate(perm[t], perm[p])
    assert np.allclose(iou_per_class(b)[perm], iou_per_class(a))
    assert math.isclose(mean_iou(a), mean_iou(b)) and global_accuracy(a) == global_accuracy(b)


def test_order_independence(rng):
    t = rng.integers(0, 3, (6, 4, 4))
    p = rng.integers(0, 3, (6, 4, 4))
    whole = ConfusionMatrix(3).accumulate(t, p)
    parts = ConfusionMatrix(3)
    for i in (5, 2, 0, 3, 1, 4):
        parts.accumulate(t[i], p[i])
    assert np.array_equal(whole.counts, parts.counts)
    halves = ConfusionMatrix(3).accumulate(t[:3], p[:3]).merge(ConfusionMatrix(3).accumulate(t[3:], p[3:]))
    assert np.array_equal(halves.counts, whole.counts)


def test_errors():
    with pytest.raises(MetricsError):
        ConfusionMatrix(2).accumulate(np.zeros((2, 2), int), np.zeros((2, 3), int))
    with pytest.raises(MetricsError):
        ConfusionMatrix(2).accumulate(np.array([[2]]), np.array([[0]]))
    with pytest.raises(MetricsError):
        mean_iou(ConfusionMatrix(2))
    with pytest.raises(MetricsError):
        global_accuracy(ConfusionMatrix(2))


def test_reports():
    cm = ConfusionMatrix.from_counts([[3, 1], [2, 4]])
    table = format_table(cm, ["road", "car"])
    assert "road" in table and "Mean IoU" in table
    csv = metrics_csv(cm).splitlines()
    assert csv[0].startswith("class") and len(csv) >= 3
