"""B-scan preprocessing: flatten on Bruch's membrane, crop a fixed physical window,
resample, and min-max normalise.

Output pixel ``(r, c)`` samples the raw B-scan at

    x = cx + (c - (out_w - 1) / 2) * cols_in_window / out_w
    y = surface(x) + (r - anchor_row) * rows_in_window / out_h

where ``cols_in_window``/``rows_in_window`` are the raw pixel counts covering the
lateral/axial field of view, ``cx`` is the raw image centre column and
``anchor_row = anchor_fraction * out_h - 0.5``. Samples are bilinear; anything outside
the raw image reads as 0. A processed B-scan carries a flat surface at ``anchor_row``
and the spacing of the output grid, so processing it again is the identity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from src.data.cohort import Cohort, EyeSeries, Patient, PixelSpacing, Scan
from src.utils.errors import ConfigError, PreprocessingError

logger = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    field_of_view_mm: Tuple[float, float] = (6.0, 0.5)  # lateral, axial
    out_size: Tuple[int, int] = (128, 128)  # rows, cols
    anchor_fraction: float = 0.8

    def __post_init__(self) -> None:
        self.field_of_view_mm = tuple(float(v) for v in self.field_of_view_mm)
        self.out_size = tuple(int(v) for v in self.out_size)
        if min(self.field_of_view_mm) <= 0:
            raise ConfigError(f"field_of_view_mm must be positive, got {self.field_of_view_mm}")
        if min(self.out_size) < 1:
            raise ConfigError(f"out_size must be positive, got {self.out_size}")
        if not 0.0 < self.anchor_fraction < 1.0:
            raise ConfigError(f"anchor_fraction must be in (0, 1), got {self.anchor_fraction}")

    @property
    def anchor_row(self) -> float:
        return self.anchor_fraction * self.out_size[0] - 0.5

    @property
    def output_spacing(self) -> PixelSpacing:
        lateral, axial = self.field_of_view_mm
        return PixelSpacing(axial_mm=axial / self.out_size[0], lateral_mm=lateral / self.out_size[1])


def flatten_crop_resample(
    raw_bscan: np.ndarray,
    baseline_surface: np.ndarray,
    spacing: Optional[PixelSpacing],
    config: Optional[PreprocessConfig] = None,
) -> np.ndarray:
    """Flatten, crop and resample one B-scan; returns an ``out_size`` image in [0, 1].

    Raises:
        PreprocessingError: missing spacing, a surface that does not span the B-scan
            width, or surface rows outside the image.
    """
    config = config or PreprocessConfig()
    if spacing is None:
        raise PreprocessingError("pixel spacing metadata is required for flattening")
    raw = np.asarray(raw_bscan, dtype=np.float64)
    if raw.ndim != 2:
        raise PreprocessingError(f"expected a 2-D B-scan, got shape {raw.shape}")
    h, w = raw.shape
    surface = np.asarray(baseline_surface, dtype=np.float64)
    if surface.shape != (w,):
        raise PreprocessingError(f"surface profile has {surface.shape} entries for a B-scan {w} columns wide")
    if not np.all(np.isfinite(surface)) or surface.min() < 0 or surface.max() > h - 1:
        raise PreprocessingError(
            f"surface rows must lie in [0, {h - 1}], got range [{surface.min():.2f}, {surface.max():.2f}]"
        )

    out_h, out_w = config.out_size
    lateral_mm, axial_mm = config.field_of_view_mm
    cols_in_window = lateral_mm / spacing.lateral_mm
    rows_in_window = axial_mm / spacing.axial_mm

    cx = (w - 1) / 2.0
    x_src = cx + (np.arange(out_w) - (out_w - 1) / 2.0) * (cols_in_window / out_w)
    surface_at = np.interp(x_src, np.arange(w), surface)
    dy = (np.arange(out_h) - config.anchor_row) * (rows_in_window / out_h)
    rows = surface_at[None, :] + dy[:, None]
    cols = np.broadcast_to(x_src[None, :], rows.shape)

    sampled = ndimage.map_coordinates(raw, [rows, cols], order=1, mode="constant", cval=0.0)
    return normalize_intensity(sampled)


def normalize_intensity(image: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant image becomes all zeros."""
    lo, hi = float(image.min()), float(image.max())
    if hi - lo <= 0:
        return np.zeros_like(image, dtype=np.float64)
    return (image - lo) / (hi - lo)


def preprocess_scan(scan: Scan, config: Optional[PreprocessConfig] = None) -> Scan:
    """Processed copy of ``scan`` with a flat surface on the anchor row."""
    config = config or PreprocessConfig()
    if scan.baseline_surface is None:
        raise PreprocessingError(f"scan {scan.scan_id} has no baseline surface")
    volume = np.stack(
        [
            flatten_crop_resample(scan.volume[i], scan.baseline_surface[i], scan.spacing, config)
            for i in range(scan.n_bscans)
        ]
    )
    flat = np.full((scan.n_bscans, config.out_size[1]), config.anchor_row)
    return replace(scan, volume=volume, baseline_surface=flat, spacing=config.output_spacing)


def preprocess_cohort(cohort: Cohort, config: Optional[PreprocessConfig] = None) -> Cohort:
    """New cohort whose volumes are all preprocessed."""
    config = config or PreprocessConfig()
    patients = []
    for patient in cohort.patients:
        eyes = [
            EyeSeries(eye.eye_id, eye.patient_id, [preprocess_scan(s, config) for s in eye.scans], eye.conversion_time)
            for eye in patient.eyes
        ]
        patients.append(Patient(patient.patient_id, eyes))
    processed = Cohort(patients, dict(cohort.meta))
    processed.meta["preprocess"] = {
        "field_of_view_mm": list(config.field_of_view_mm),
        "out_size": list(config.out_size),
        "anchor_fraction": config.anchor_fraction,
    }
    logger.info("Preprocessed %d scans to %dx%d", sum(1 for _ in processed.scans()), *config.out_size)
    return processed


__all__ = ["PreprocessConfig", "flatten_crop_resample", "normalize_intensity", "preprocess_cohort", "preprocess_scan"]
