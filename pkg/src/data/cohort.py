"""Longitudinal cohort data model: patients -> eyes -> time-stamped scan volumes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional

import numpy as np

from src.utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PixelSpacing:
    """Physical size of one pixel in millimetres."""

    axial_mm: float
    lateral_mm: float

    def __post_init__(self) -> None:
        if not (self.axial_mm > 0 and self.lateral_mm > 0):
            raise ValidationError(f"pixel spacing must be positive, got {self.axial_mm} x {self.lateral_mm}")


@dataclass
class Scan:
    """One OCT volume: ``volume`` is (n_bscans, H, W), ``baseline_surface`` is (n_bscans, W)
    holding the Bruch's membrane row of every column."""

    patient_id: str
    eye_id: str
    t: float
    volume: np.ndarray
    baseline_surface: Optional[np.ndarray] = None
    spacing: Optional[PixelSpacing] = None
    lesion_area: Optional[float] = None

    def __post_init__(self) -> None:
        self.t = float(self.t)
        if not np.isfinite(self.t) or self.t < 0:
            raise ValidationError(f"acquisition time must be finite and >= 0, got {self.t}")
        if self.volume.ndim != 3:
            raise ValidationError(f"scan volume must be (n_bscans, H, W), got shape {self.volume.shape}")
        if self.baseline_surface is not None and self.baseline_surface.shape != (self.n_bscans, self.width):
            raise ValidationError(
                f"baseline surface shape {self.baseline_surface.shape} does not match volume {self.volume.shape}"
            )

    @property
    def scan_id(self) -> str:
        return f"{self.eye_id}@{self.t:g}"

    @property
    def n_bscans(self) -> int:
        return int(self.volume.shape[0])

    @property
    def height(self) -> int:
        return int(self.volume.shape[1])

    @property
    def width(self) -> int:
        return int(self.volume.shape[2])

    def bscan(self, index: int) -> np.ndarray:
        return self.volume[index]


@dataclass
class EyeSeries:
    eye_id: str
    patient_id: str
    scans: List[Scan]
    conversion_time: Optional[float] = None

    def __post_init__(self) -> None:
        times = [s.t for s in self.scans]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"scan times of eye {self.eye_id} must be strictly increasing, got {times}")
        if self.conversion_time is not None:
            if times and times[-1] > self.conversion_time:
                raise ValidationError(
                    f"eye {self.eye_id} has a scan at {times[-1]} after conversion at {self.conversion_time}"
                )
        shapes = {s.volume.shape[1:] for s in self.scans}
        if len(shapes) > 1:
            raise ValidationError(f"B-scans of eye {self.eye_id} differ in size: {sorted(shapes)}")

    @property
    def times(self) -> List[float]:
        return [s.t for s in self.scans]

    @property
    def is_converter(self) -> bool:
        return self.conversion_time is not None

    @property
    def last_time(self) -> float:
        if not self.scans:
            raise InsufficientDataError(f"eye {self.eye_id} has no scans")
        return self.scans[-1].t

    @property
    def n_bscans(self) -> int:
        """B-scans available at every visit of this eye."""
        return min(s.n_bscans for s in self.scans) if self.scans else 0


@dataclass
class Patient:
    patient_id: str
    eyes: List[EyeSeries]

    def __post_init__(self) -> None:
        if not 1 <= len(self.eyes) <= 2:
            raise ValidationError(f"patient {self.patient_id} must have one or two eyes, got {len(self.eyes)}")
        for eye in self.eyes:
            if eye.patient_id != self.patient_id:
                raise ValidationError(f"eye {eye.eye_id} belongs to {eye.patient_id}, not {self.patient_id}")

    @property
    def is_converter(self) -> bool:
        return any(eye.is_converter for eye in self.eyes)


@dataclass(slots=True)
class CohortSummary:
    """Counts printed by ``synth`` and stored in the cohort manifest."""

    n_patients: int
    n_eyes: int
    n_scans: int
    n_converters: int
    n_converter_patients: int
    mean_scans_per_eye: float
    max_followup_months: float

    def as_dict(self) -> Dict[str, Any]:
        return {
            "n_patients": self.n_patients,
            "n_eyes": self.n_eyes,
            "n_scans": self.n_scans,
            "n_converters": self.n_converters,
            "n_converter_patients": self.n_converter_patients,
            "mean_scans_per_eye": self.mean_scans_per_eye,
            "max_followup_months": self.max_followup_months,
        }


@dataclass
class Cohort:
    patients: List[Patient]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: Dict[str, str] = {}
        patient_ids = set()
        for patient in self.patients:
            if patient.patient_id in patient_ids:
                raise ValidationError(f"duplicate patient id {patient.patient_id}")
            patient_ids.add(patient.patient_id)
            for eye in patient.eyes:
                if eye.eye_id in seen:
                    raise ValidationError(f"eye id {eye.eye_id} appears in {seen[eye.eye_id]} and {patient.patient_id}")
                seen[eye.eye_id] = patient.patient_id

    def eyes(self) -> Iterator[EyeSeries]:
        for patient in self.patients:
            yield from patient.eyes

    def scans(self) -> Iterator[Scan]:
        for eye in self.eyes():
            yield from eye.scans

    @property
    def patient_ids(self) -> List[str]:
        return [p.patient_id for p in self.patients]

    def patient(self, patient_id: str) -> Patient:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise KeyError(patient_id)

    def eye(self, eye_id: str) -> EyeSeries:
        for eye in self.eyes():
            if eye.eye_id == eye_id:
                return eye
        raise KeyError(eye_id)

    def subset(self, patient_ids: Iterable[str]) -> "Cohort":
        """Cohort restricted to ``patient_ids`` (shares scan objects)."""
        wanted = set(patient_ids)
        missing = wanted - set(self.patient_ids)
        if missing:
            raise ValidationError(f"unknown patient ids: {sorted(missing)[:5]}")
        return Cohort([p for p in self.patients if p.patient_id in wanted], dict(self.meta))

    def __len__(self) -> int:
        return len(self.patients)

    def summary(self) -> CohortSummary:
        eyes = list(self.eyes())
        n_scans = sum(len(e.scans) for e in eyes)
        return CohortSummary(
            n_patients=len(self.patients),
            n_eyes=len(eyes),
            n_scans=n_scans,
            n_converters=sum(e.is_converter for e in eyes),
            n_converter_patients=sum(p.is_converter for p in self.patients),
            mean_scans_per_eye=n_scans / len(eyes) if eyes else 0.0,
            max_followup_months=max((e.last_time for e in eyes if e.scans), default=0.0),
        )


@dataclass(frozen=True)
class ScanPair:
    """Two B-scans of one eye at the same index, ``delta_t = t_b - t_a`` in months."""

    bscan_a: np.ndarray
    bscan_b: np.ndarray
    t_a: float
    t_b: float
    eye_id: str
    bscan_index: int

    @property
    def delta_t(self) -> float:
        return self.t_b - self.t_a


__all__ = ["Cohort", "CohortSummary", "EyeSeries", "Patient", "PixelSpacing", "Scan", "ScanPair"]
