"""Visit selection for the conversion-within-horizon task.

One visit per eye:
- converter: the visit furthest before conversion with ``0 < conversion - t <= horizon``;
  label 1.
- non-converter: the visit furthest before the eye's last visit with
  ``0 < t_last - t <= horizon``; label 0.
Eyes without an eligible visit are left out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.data.cohort import Cohort, EyeSeries, Scan
from src.utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

HORIZONS = (6, 12, 18)


@dataclass(frozen=True)
class SelectedVisit:
    scan: Scan
    label: int
    eye_id: str
    patient_id: str
    months_before_anchor: float

    def __iter__(self):
        yield self.scan
        yield self.label


def check_horizon(horizon: float, allow_any: bool = False) -> float:
    if allow_any:
        if horizon <= 0:
            raise ValidationError(f"horizon must be positive, got {horizon}")
    elif horizon not in HORIZONS:
        raise ValidationError(f"horizon must be one of {HORIZONS} months, got {horizon} (see --allow-any-horizon)")
    return float(horizon)


def select_visit(
    series: EyeSeries,
    horizon: float,
    study_end_time: Optional[float] = None,
    allow_any: bool = False,
) -> Optional[SelectedVisit]:
    """The single visit of ``series`` used for the horizon task, or None if none is eligible.

    An eye counts as a converter when it has a conversion time not later than
    ``study_end_time`` (any conversion time if no end is given).
    """
    horizon = check_horizon(horizon, allow_any)
    if not series.scans:
        return None
    converts = series.conversion_time is not None and (
        study_end_time is None or series.conversion_time <= study_end_time
    )
    anchor = series.conversion_time if converts else series.last_time

    best: Optional[Scan] = None
    best_distance = -np.inf
    for scan in series.scans:
        distance = anchor - scan.t
        if 0 < distance <= horizon and distance > best_distance:
            best, best_distance = scan, distance
    if best is None:
        return None
    return SelectedVisit(best, int(converts), series.eye_id, series.patient_id, float(best_distance))


def select_visits(
    cohort: Cohort,
    horizon: float,
    study_end_time: Optional[float] = None,
    allow_any: bool = False,
) -> List[SelectedVisit]:
    """``select_visit`` over every eye of ``cohort``, skipping ineligible eyes."""
    selected = []
    skipped = 0
    for eye in cohort.eyes():
        visit = select_visit(eye, horizon, study_end_time, allow_any)
        if visit is None:
            skipped += 1
            continue
        selected.append(visit)
    if skipped:
        logger.warning("%d eyes have no visit eligible for the %g-month horizon", skipped, horizon)
    return selected


def central_index(n_bscans: int) -> int:
    if n_bscans < 1:
        raise InsufficientDataError("volume has no B-scans")
    return n_bscans // 2


def central_bscan(scan: Scan) -> np.ndarray:
    """B-scan at index ``floor(n / 2)``."""
    return scan.bscan(central_index(scan.n_bscans))


__all__ = ["HORIZONS", "SelectedVisit", "central_bscan", "central_index", "check_horizon", "select_visit", "select_visits"]
