"""Regression and classification metrics, cross-validation aggregation and reports."""

from .classification import CVReport, ClassificationMetrics, aggregate_cv, average_precision, roc_auc
from .regression import (
    RegressionMetrics,
    mae,
    order_accuracy,
    per_interval_breakdown,
    r_squared,
    volume_interval_prediction,
)
from .reports import write_report

__all__ = [
    "CVReport",
    "ClassificationMetrics",
    "RegressionMetrics",
    "aggregate_cv",
    "average_precision",
    "mae",
    "order_accuracy",
    "per_interval_breakdown",
    "r_squared",
    "roc_auc",
    "volume_interval_prediction",
    "write_report",
]
