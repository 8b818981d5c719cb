"""Metric log: one CSV row per (fold, step, split, metric, value).

The log is the only input of the report generator, so its format is fixed:
``fold,step,split,metric,value`` with values written at full precision.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from src.utils.errors import CorruptLogError

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["fold", "step", "split", "metric", "value"]
METRICS_FILENAME = "metrics.csv"
FLOAT_FORMAT = "%.17g"


class MetricLog:
    """In-memory metric rows, flushed to CSV on demand."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.rows: List[dict] = []

    def log(self, fold: int, step: int, split: str, metric: str, value: float) -> None:
        self.rows.append({"fold": int(fold), "step": int(step), "split": split, "metric": metric,
                          "value": float(value)})

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def select(self, split: Optional[str] = None, metric: Optional[str] = None,
               fold: Optional[int] = None) -> pd.DataFrame:
        df = self.frame()
        if split is not None:
            df = df[df["split"] == split]
        if metric is not None:
            df = df[df["metric"] == metric]
        if fold is not None:
            df = df[df["fold"] == fold]
        return df.reset_index(drop=True)

    def flush(self) -> Optional[Path]:
        if self.path is None:
            return None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(self.path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self.path


def read_metric_log(path: Union[str, Path]) -> pd.DataFrame:
    """Parse a metric log, rejecting malformed rows.

    Raises:
        FileNotFoundError: no log at ``path``.
        CorruptLogError: header mismatch or a row that does not parse; ``row`` is the
            1-based line number in the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metric log not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CorruptLogError(path, 1, str(e)) from e
    if list(raw.columns) != LOG_COLUMNS:
        raise CorruptLogError(path, 1, f"expected columns {LOG_COLUMNS}, got {list(raw.columns)}")

    records = []
    for i, row in enumerate(raw.itertuples(index=False)):
        line = i + 2
        try:
            value = float(row.value)
            record = {"fold": int(row.fold), "step": int(row.step), "split": row.split, "metric": row.metric,
                      "value": value}
        except (TypeError, ValueError) as e:
            raise CorruptLogError(path, line, str(e)) from e
        if not row.split or not row.metric:
            raise CorruptLogError(path, line, "empty split or metric name")
        if not np.isfinite(value):
            raise CorruptLogError(path, line, f"non-finite value {row.value!r}")
        records.append(record)
    return pd.DataFrame(records, columns=LOG_COLUMNS)


__all__ = ["FLOAT_FORMAT", "LOG_COLUMNS", "METRICS_FILENAME", "MetricLog", "read_metric_log"]
