import math

import numpy as np
import pytest

from src.evaluation.classification import ClassificationMetrics, aggregate_cv, average_precision, roc_auc
from src.evaluation.regression import (
    RegressionMetrics,
    interval_bins,
    mae,
    order_accuracy,
    per_interval_breakdown,
    r_squared,
    summarize_breakdown,
    volume_interval_prediction,
)
from src.utils.errors import ShapeError, UndefinedMetricError, ValidationError


def _brute_force_auc(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _brute_force_ap(labels, scores):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, precisions = 0, []
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / len(precisions)


# ── interval regression ──────────────────────────────────────────────────────


def test_volume_prediction_is_mean_of_bscans():
    assert volume_interval_prediction([10, 14]) == 12.0
    assert volume_interval_prediction([7]) == 7.0
    with pytest.raises(UndefinedMetricError):
        volume_interval_prediction([])


def test_r_squared_values():
    y = np.array([0.0, 1.0, 2.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, y.mean())) == 0.0
    assert r_squared(y, [0, 0, 0]) == pytest.approx(-1.5)


def test_r_squared_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        r_squared([3, 3, 3], [1, 2, 3])
    with pytest.raises(UndefinedMetricError):
        r_squared([3], [3])
    with pytest.raises(ShapeError):
        r_squared([1, 2], [1, 2, 3])


def test_mae():
    assert mae([3, -6], [6, -3]) == 3.0
    assert mae([3, -6], [3, -6]) == 0.0
    assert mae([-3, 6], [-6, 3]) == mae([3, -6], [6, -3])


def test_order_accuracy():
    assert order_accuracy([3, -6, 12], [1, -2, -5]) == pytest.approx(2 / 3)
    assert order_accuracy([3, -6], [3, -6]) == 1.0
    assert order_accuracy([3, -6], [0, 0]) == 0.0


def test_order_accuracy_scaling_and_negation(rng):
    y = rng.choice([-9.0, -3.0, 3.0, 6.0, 12.0], size=40)
    yhat = rng.normal(size=40)
    acc = order_accuracy(y, yhat)
    assert order_accuracy(y, 7.5 * yhat) == acc
    assert order_accuracy(y, -yhat) == pytest.approx(1 - acc)


def test_order_accuracy_rejects_zero_intervals():
    with pytest.raises(ValidationError):
        order_accuracy([0, 3], [1, 1])
    with pytest.raises(UndefinedMetricError):
        order_accuracy([], [])


def test_interval_bins_round_to_nearest_multiple():
    np.testing.assert_array_equal(interval_bins([3, -4, 4.5, 7, -24]), [3, 3, 6, 6, 24])


def test_per_interval_breakdown():
    table = per_interval_breakdown([3, 3, 6], [3, 0, 3])
    assert list(table["interval_bin"]) == [3, 3, 6]
    assert list(table["rel_error_pct"]) == [0.0, 100.0, 50.0]
    assert list(table["correct_order"]) == [True, False, True]

    summary = summarize_breakdown(table)
    assert list(summary["n"]) == [2, 1]
    assert summary["n"].sum() == len(table)
    assert list(summary["order_accuracy"]) == [0.5, 1.0]


def test_exact_predictions_give_zero_error_in_every_bin():
    y = np.array([3.0, -6.0, 9.0, -12.0, 24.0])
    summary = summarize_breakdown(per_interval_breakdown(y, y))
    assert (summary["rel_error_median"] == 0).all()
    assert (summary["order_accuracy"] == 1.0).all()


def test_regression_metrics_bundle():
    metrics = RegressionMetrics.compute([3, -6, 12, 6], [2, -5, 10, 7])
    assert metrics.mae_months == pytest.approx(1.25)
    assert metrics.order_accuracy == 1.0
    assert set(metrics.as_dict()) == {"r2", "mae_months", "order_accuracy"}
    assert metrics.per_bin["interval_bin"].tolist() == [3, 6, 12]


# ── classification ───────────────────────────────────────────────────────────


def test_roc_auc_examples():
    assert roc_auc([1, 0, 1, 0], [0.9, 0.1, 0.8, 0.2]) == 1.0
    assert roc_auc([1, 0, 1, 0], [0.9, 0.1, 0.3, 0.35]) == 0.75


def test_roc_auc_counts_tie_as_half():
    """One tied positive-negative pair among four contributes 0.5 / 4."""
    assert roc_auc([1, 1, 0, 0], [0.5, 0.9, 0.5, 0.1]) == pytest.approx(3.5 / 4)


def test_roc_auc_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        roc_auc([1, 1], [0.2, 0.3])


def test_roc_auc_rejects_bad_labels():
    with pytest.raises(ValidationError):
        roc_auc([2, 0], [0.2, 0.3])


def test_metrics_match_brute_force_on_1000_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.permutation(np.concatenate([[0, 1], rng.integers(0, 2, size=n - 2)])).tolist()
        scores = np.round(rng.random(n), int(rng.integers(1, 3))).tolist()  # rounding forces ties
        assert roc_auc(labels, scores) == _brute_force_auc(labels, scores), (labels, scores)
        assert average_precision(labels, scores) == _brute_force_ap(labels, scores), (labels, scores)


def test_roc_auc_invariant_under_monotone_transform(rng):
    labels = rng.integers(0, 2, size=30)
    labels[:2] = [0, 1]
    scores = rng.normal(size=30)
    assert roc_auc(labels, np.exp(3 * scores) + 1) == roc_auc(labels, scores)


def test_average_precision_examples():
    assert average_precision([1, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(5 / 6)
    assert average_precision([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert average_precision([0, 0, 0, 1], [0.9, 0.8, 0.7, 0.1]) == pytest.approx(1 / 4)


def test_average_precision_ties_keep_input_order():
    assert average_precision([0, 1], [0.5, 0.5]) == pytest.approx(0.5)
    assert average_precision([1, 0], [0.5, 0.5]) == 1.0


def test_average_precision_needs_a_positive():
    with pytest.raises(UndefinedMetricError):
        average_precision([0, 0], [0.1, 0.2])


def test_classification_metrics_counts():
    metrics = ClassificationMetrics.compute([1, 0, 0], [0.9, 0.2, 0.4])
    assert (metrics.n_pos, metrics.n_neg) == (1, 2)
    assert metrics.as_dict() == {"roc_auc": 1.0, "average_precision": 1.0}


# ── cross-validation ─────────────────────────────────────────────────────────


def test_aggregate_cv_population_std():
    report = aggregate_cv([{"roc_auc": 0.7}, {"roc_auc": 0.8}], horizon=12, init="ssl")
    assert report.mean["roc_auc"] == pytest.approx(0.75)
    assert report.std["roc_auc"] == pytest.approx(0.05)
    assert report.n_folds == 2
    assert report.meta == {"horizon": 12, "init": "ssl"}
    assert report.cell("roc_auc") == "0.750 ± 0.050"


def test_identical_folds_have_zero_std():
    report = aggregate_cv([{"ap": 0.6}] * 6)
    assert report.std["ap"] == 0.0
    assert report.n_folds == 6


def test_aggregate_cv_errors():
    with pytest.raises(ValidationError):
        aggregate_cv([{"roc_auc": 0.7}])
    with pytest.raises(ValidationError):
        aggregate_cv([{"roc_auc": 0.7}, {"average_precision": 0.8}])
