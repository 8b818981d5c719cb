"""Pretext regression metrics: R², MAE, order accuracy and the per-interval breakdown.

Zero true intervals never reach these functions: pairs are built from distinct visits.
A predicted interval of exactly 0 counts as a wrong order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
import pandas as pd

from src.data.sampling import INTERVAL_BIN_MONTHS
from src.utils.errors import ShapeError, UndefinedMetricError, ValidationError

BREAKDOWN_COLUMNS = ["interval_bin", "delta_t", "prediction", "rel_error_pct", "abs_error", "signed_error", "correct_order"]


def _pair(y: Sequence[float], yhat: Sequence[float], min_len: int = 1):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ShapeError(f"{y.size} targets but {yhat.size} predictions")
    if y.size < min_len:
        raise UndefinedMetricError(f"need at least {min_len} samples, got {y.size}")
    return y, yhat


def volume_interval_prediction(per_bscan_predictions: Sequence[float]) -> float:
    """Volume-level interval: mean of the per-B-scan predictions."""
    values = np.asarray(per_bscan_predictions, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise UndefinedMetricError("no B-scan predictions to average")
    return float(values.mean())


def r_squared(y: Sequence[float], yhat: Sequence[float]) -> float:
    y, yhat = _pair(y, yhat, min_len=2)
    total = np.sum((y - y.mean()) ** 2)
    if total == 0:
        raise UndefinedMetricError("R² is undefined for constant targets")
    return float(1.0 - np.sum((y - yhat) ** 2) / total)


def mae(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Mean absolute error in months."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def _correct_order(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    if np.any(y == 0):
        raise ValidationError("order accuracy is undefined for zero true intervals")
    return np.sign(yhat) == np.sign(y)


def order_accuracy(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Fraction of pairs whose predicted sign matches the true chronological order."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(_correct_order(y, yhat)))


def interval_bins(y: Sequence[float], bin_width: float = INTERVAL_BIN_MONTHS) -> np.ndarray:
    """|y| rounded to the nearest multiple of ``bin_width`` (halves round up)."""
    return np.floor(np.abs(np.asarray(y, dtype=np.float64)) / bin_width + 0.5) * bin_width


def per_interval_breakdown(y: Sequence[float], yhat: Sequence[float],
                           bin_width: float = INTERVAL_BIN_MONTHS) -> pd.DataFrame:
    """One row per pair with its interval bin, relative error (%) and order correctness."""
    y, yhat = _pair(y, yhat)
    correct = _correct_order(y, yhat)
    return pd.DataFrame({
        "interval_bin": interval_bins(y, bin_width),
        "delta_t": y,
        "prediction": yhat,
        "rel_error_pct": 100.0 * np.abs(yhat - y) / np.abs(y),
        "abs_error": np.abs(yhat - y),
        "signed_error": yhat - y,
        "correct_order": correct,
    }, columns=BREAKDOWN_COLUMNS)


def summarize_breakdown(breakdown: pd.DataFrame) -> pd.DataFrame:
    """Per-bin summary: count, median and quartiles of relative error, order accuracy,
    mean absolute and mean signed error."""
    grouped = breakdown.groupby("interval_bin", sort=True)
    summary = pd.DataFrame({
        "n": grouped.size(),
        "rel_error_median": grouped["rel_error_pct"].median(),
        "rel_error_q1": grouped["rel_error_pct"].quantile(0.25),
        "rel_error_q3": grouped["rel_error_pct"].quantile(0.75),
        "order_accuracy": grouped["correct_order"].mean(),
        "mae_months": grouped["abs_error"].mean(),
        "mean_signed_error": grouped["signed_error"].mean(),
    })
    return summary.reset_index()


@dataclass
class RegressionMetrics:
    r2: float
    mae_months: float
    order_accuracy: float
    per_bin: pd.DataFrame = field(repr=False)

    @classmethod
    def compute(cls, y: Sequence[float], yhat: Sequence[float],
                bin_width: float = INTERVAL_BIN_MONTHS) -> "RegressionMetrics":
        return cls(
            r2=r_squared(y, yhat),
            mae_months=mae(y, yhat),
            order_accuracy=order_accuracy(y, yhat),
            per_bin=summarize_breakdown(per_interval_breakdown(y, yhat, bin_width)),
        )

    def as_dict(self) -> Dict[str, float]:
        return {"r2": self.r2, "mae_months": self.mae_months, "order_accuracy": self.order_accuracy}


__all__ = [
    "RegressionMetrics",
    "interval_bins",
    "mae",
    "order_accuracy",
    "per_interval_breakdown",
    "r_squared",
    "summarize_breakdown",
    "volume_interval_prediction",
]
