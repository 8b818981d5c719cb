"""Conversion-classification metrics and cross-validation aggregation.

ROC AUC uses the Mann-Whitney rank-sum form with average ranks, so a tied
positive/negative pair counts one half. Average precision ranks by descending score
with a stable sort, so tied scores keep their input order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from src.utils.errors import ShapeError, UndefinedMetricError, ValidationError


def _labels_scores(labels: Sequence[int], scores: Sequence[float]):
    y = np.asarray(labels).astype(int).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ShapeError(f"{y.size} labels but {s.size} scores")
    if np.any((y != 0) & (y != 1)):
        raise ValidationError("labels must be 0 or 1")
    return y, s


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Probability that a random positive scores above a random negative (ties count 1/2).

    Raises:
        UndefinedMetricError: only one class present.
    """
    y, s = _labels_scores(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"ROC AUC needs both classes (got {n_pos} positive, {n_neg} negative)")
    ranks = rankdata(s, method="average")
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mean precision at the rank of each positive, ranked by descending score.

    Raises:
        UndefinedMetricError: no positive label.
    """
    y, s = _labels_scores(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, n_pos + 1) / ranks
    return math.fsum(precisions.tolist()) / n_pos


@dataclass(slots=True)
class ClassificationMetrics:
    roc_auc: float
    average_precision: float
    n_pos: int
    n_neg: int

    @classmethod
    def compute(cls, labels: Sequence[int], scores: Sequence[float]) -> "ClassificationMetrics":
        y = np.asarray(labels).astype(int)
        return cls(roc_auc(labels, scores), average_precision(labels, scores), int(y.sum()), int((y == 0).sum()))

    def as_dict(self) -> Dict[str, float]:
        return {"roc_auc": self.roc_auc, "average_precision": self.average_precision}


@dataclass
class CVReport:
    """Per-fold metric values with their mean and population standard deviation."""

    per_fold: List[Dict[str, float]]
    mean: Dict[str, float]
    std: Dict[str, float]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_folds(self) -> int:
        return len(self.per_fold)

    @property
    def metrics(self) -> List[str]:
        return list(self.mean)

    def cell(self, metric: str, digits: int = 3) -> str:
        return f"{self.mean[metric]:.{digits}f} ± {self.std[metric]:.{digits}f}"

    def to_dict(self) -> Dict[str, Any]:
        return {"per_fold": self.per_fold, "mean": self.mean, "std": self.std, "meta": self.meta}


def aggregate_cv(per_fold: Sequence[Mapping[str, float]], **meta) -> CVReport:
    """Mean and population std of every metric over the given folds.

    Raises:
        ValidationError: fewer than two folds, or folds reporting different metrics.
    """
    if len(per_fold) < 2:
        raise ValidationError(f"cross-validation aggregation needs at least 2 folds, got {len(per_fold)}")
    names = list(per_fold[0])
    for i, fold in enumerate(per_fold[1:], start=1):
        if set(fold) != set(names):
            raise ValidationError(f"fold {i} reports metrics {sorted(fold)}, fold 0 reports {sorted(names)}")
    table = {name: np.array([float(f[name]) for f in per_fold]) for name in names}
    return CVReport(
        per_fold=[{name: float(f[name]) for name in names} for f in per_fold],
        mean={name: float(np.mean(v)) for name, v in table.items()},
        std={name: float(np.std(v, ddof=0)) for name, v in table.items()},
        meta=dict(meta),
    )


__all__ = ["CVReport", "ClassificationMetrics", "aggregate_cv", "average_precision", "roc_auc"]
