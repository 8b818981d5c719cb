"""Synthetic longitudinal OCT cohort generator.

DESIGN NOTE: Rendering Model
============================

Each B-scan is rendered analytically from layered bands with smooth (sigmoid) edges:
vitreous, inner retina with a fixed per-eye speckle texture, a bright RPE band, drusen
filling between the RPE and Bruch's membrane (BM), and a choroid decaying below BM.

Disease course per eye:
- Drusen are Gaussian elevations of the RPE above BM. Their heights approach a per-lesion
  maximum as ``1 - exp(-rate * t)``, so lesion size never shrinks with time.
- The RPE reflectivity fades with the same time constant (monotone progression signal).
- Conversion time is exponential with a hazard proportional to the eye's growth rate;
  visits after conversion are not generated.
- In the ``atrophy_window_months`` before conversion the choroid under the largest
  lesion brightens (hypertransmission) and the RPE above it thins.

Each visit gets a registration jitter (sub-pixel shift of the whole geometry) and
additive Gaussian noise. The BM row of every column is stored exactly as the scan's
baseline surface. Pixel spacing is chosen so that the 6 mm x 0.5 mm preprocessing
window covers the whole raw image.

Every patient draws from its own generator seeded with ``(seed, patient_index)``, so
patients can be generated in any order or in parallel.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import gaussian_filter
from tqdm import tqdm

from src.data.cohort import Cohort, EyeSeries, Patient, PixelSpacing, Scan
from src.utils.errors import ConfigError
from src.utils.performance import monitor_performance

logger = logging.getLogger(__name__)

FIELD_OF_VIEW_MM = (6.0, 0.5)  # lateral, axial
LESION_MASK_THRESHOLD_PX = 0.5


@dataclass
class SynthConfig:
    n_patients: int = 48
    bilateral_fraction: float = 0.5
    visit_intervals: Tuple[int, ...] = (3, 6)
    max_followup_months: float = 36.0
    image_size: Tuple[int, int] = (64, 96)  # rows, cols
    n_bscans: int = 5
    lesion_count: float = 4.0
    growth_rate: float = 0.06
    lesion_amplitude: float = 6.0
    progression_strength: float = 0.5
    conversion_hazard: float = 0.02
    atrophy_amplitude: float = 0.4
    atrophy_window_months: float = 18.0
    noise_level: float = 0.03
    jitter_px: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.visit_intervals = tuple(int(v) for v in self.visit_intervals)
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.n_patients < 1:
            raise ConfigError(f"n_patients must be at least 1, got {self.n_patients}")
        if not self.visit_intervals or min(self.visit_intervals) <= 0:
            raise ConfigError(f"visit_intervals must be positive months, got {self.visit_intervals}")
        if self.max_followup_months <= 0:
            raise ConfigError("max_followup_months must be positive")
        if min(self.image_size) < 16:
            raise ConfigError(f"image_size must be at least 16x16, got {self.image_size}")
        if self.n_bscans < 1:
            raise ConfigError("n_bscans must be at least 1")
        if not 0.0 <= self.bilateral_fraction <= 1.0:
            raise ConfigError("bilateral_fraction must be in [0, 1]")
        rates = {
            "lesion_count": self.lesion_count,
            "growth_rate": self.growth_rate,
            "lesion_amplitude": self.lesion_amplitude,
            "progression_strength": self.progression_strength,
            "conversion_hazard": self.conversion_hazard,
            "atrophy_amplitude": self.atrophy_amplitude,
            "atrophy_window_months": self.atrophy_window_months,
            "noise_level": self.noise_level,
            "jitter_px": self.jitter_px,
        }
        negative = [name for name, value in rates.items() if value < 0]
        if negative:
            raise ConfigError(f"synthetic cohort parameters must be >= 0: {', '.join(negative)}")
        if self.progression_strength > 1.0:
            raise ConfigError("progression_strength must be at most 1")

    @property
    def spacing(self) -> PixelSpacing:
        h, w = self.image_size
        return PixelSpacing(axial_mm=FIELD_OF_VIEW_MM[1] / h, lateral_mm=FIELD_OF_VIEW_MM[0] / w)


@dataclass
class _EyeModel:
    """Per-eye parameters fixed across visits."""

    curvature_px: float
    tilt_px: float
    rate: float
    conversion_time: Optional[float]
    centers_mm: np.ndarray  # (n_lesions, 2): lateral, slice
    sigmas_mm: np.ndarray
    h0: np.ndarray
    hmax: np.ndarray
    texture: np.ndarray  # (n_bscans, H, W)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _band(rows: np.ndarray, top: np.ndarray, bottom: np.ndarray, softness: float = 0.7) -> np.ndarray:
    return _sigmoid((rows - top) / softness) * _sigmoid((bottom - rows) / softness)


def _slice_positions_mm(n_bscans: int) -> np.ndarray:
    return (np.arange(n_bscans) - (n_bscans - 1) / 2.0) * 0.25


def _draw_eye(config: SynthConfig, rng: np.random.Generator) -> _EyeModel:
    h, w = config.image_size
    n_lesions = max(1, int(rng.poisson(config.lesion_count))) if config.lesion_count > 0 else 0
    curvature = rng.uniform(2.0, 0.08 * h)
    tilt = rng.uniform(-0.04, 0.04) * h
    rate = config.growth_rate * rng.gamma(2.0, 0.5)
    centers = np.column_stack([rng.uniform(-2.4, 2.4, n_lesions), rng.uniform(-0.6, 0.6, n_lesions)])
    sigmas = rng.uniform(0.15, 0.45, n_lesions)
    hmax = config.lesion_amplitude * rng.uniform(0.6, 1.0, n_lesions)
    h0 = hmax * rng.uniform(0.1, 0.4, n_lesions)
    texture = np.stack(
        [gaussian_filter(rng.standard_normal((h, w)), sigma=(1.0, 3.0)) for _ in range(config.n_bscans)]
    )
    texture /= max(float(texture.std()), 1e-12)

    hazard = config.conversion_hazard * rate / config.growth_rate if config.growth_rate > 0 else 0.0
    draw = rng.exponential(1.0 / hazard) if hazard > 0 else np.inf
    conversion = float(draw) if draw <= config.max_followup_months else None
    return _EyeModel(curvature, tilt, rate, conversion, centers, sigmas, h0, hmax, texture)


def _visit_times(config: SynthConfig, rng: np.random.Generator) -> List[float]:
    times = [0.0]
    while True:
        t = times[-1] + float(rng.choice(config.visit_intervals))
        if t > config.max_followup_months:
            return times
        times.append(t)


def _elevation(eye: _EyeModel, u_mm: np.ndarray, z_mm: float, t: float) -> np.ndarray:
    """Drusen height in pixels above BM at lateral positions ``u_mm`` of slice ``z_mm``."""
    if eye.h0.size == 0:
        return np.zeros_like(u_mm)
    heights = eye.h0 + (eye.hmax - eye.h0) * (1.0 - np.exp(-eye.rate * t))
    d2 = (u_mm[:, None] - eye.centers_mm[None, :, 0]) ** 2 + (z_mm - eye.centers_mm[None, :, 1]) ** 2
    return (heights[None, :] * np.exp(-d2 / (2.0 * eye.sigmas_mm[None, :] ** 2))).sum(axis=1)


def _bm_row(eye: _EyeModel, u_mm: np.ndarray, h: int) -> np.ndarray:
    half = FIELD_OF_VIEW_MM[0] / 2.0
    return (0.8 * h - 0.5) + eye.curvature_px * ((u_mm / half) ** 2 - 0.5) + eye.tilt_px * (u_mm / half)


def _lesion_area_mm2(eye: _EyeModel, config: SynthConfig, t: float) -> float:
    """Ground-truth drusen mask area at time ``t``, averaged over the B-scans of a volume."""
    h, w = config.image_size
    spacing = config.spacing
    u_mm = (np.arange(w) - (w - 1) / 2.0) * spacing.lateral_mm
    areas = []
    for z in _slice_positions_mm(config.n_bscans):
        e = _elevation(eye, u_mm, z, t)
        areas.append(float(np.sum(e * (e >= LESION_MASK_THRESHOLD_PX))) * spacing.axial_mm * spacing.lateral_mm)
    return float(np.mean(areas))


def _render_visit(
    eye: _EyeModel, config: SynthConfig, t: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    h, w = config.image_size
    spacing = config.spacing
    dx, dy = rng.uniform(-config.jitter_px, config.jitter_px, size=2) if config.jitter_px > 0 else (0.0, 0.0)
    u_mm = (np.arange(w) - dx - (w - 1) / 2.0) * spacing.lateral_mm
    rows = np.arange(h, dtype=np.float64)[:, None]

    bm = _bm_row(eye, u_mm, h) + dy
    thickness = 0.42 * h * (1.0 - 0.25 * np.exp(-(u_mm**2) / 0.5))
    ilm = bm - thickness
    fade = 1.0 - config.progression_strength * (1.0 - np.exp(-eye.rate * t))

    atrophy = np.zeros(w)
    if eye.conversion_time is not None and eye.hmax.size:
        ramp = np.clip(1.0 - (eye.conversion_time - t) / max(config.atrophy_window_months, 1e-9), 0.0, 1.0)
        center = eye.centers_mm[int(np.argmax(eye.hmax)), 0]
        atrophy = config.atrophy_amplitude * ramp * np.exp(-((u_mm - center) ** 2) / (2 * 0.5**2))

    volume = np.empty((config.n_bscans, h, w), dtype=np.float32)
    surfaces = np.empty((config.n_bscans, w), dtype=np.float64)
    for k, z in enumerate(_slice_positions_mm(config.n_bscans)):
        e = _elevation(eye, u_mm, z, t)
        rpe_bottom = bm - e
        rpe_top = rpe_bottom - 3.0
        depth = np.maximum(rows - bm, 0.0)
        image = 0.05 + np.zeros((h, w))
        image += 0.35 * (1.0 + 0.3 * eye.texture[k]) * _band(rows, ilm, rpe_top)
        image += 0.25 * _band(rows, ilm, ilm + 0.05 * h)
        image += 0.9 * fade * (1.0 - 0.7 * np.clip(atrophy / max(config.atrophy_amplitude, 1e-9), 0, 1)) * _band(
            rows, rpe_top, rpe_bottom
        )
        image += 0.45 * _band(rows, rpe_bottom, bm)
        image += (0.3 + atrophy) * _band(rows, bm, bm + 0.15 * h) * np.exp(-depth / (0.1 * h))
        if config.noise_level > 0:
            image += rng.normal(0.0, config.noise_level, size=image.shape)
        volume[k] = np.clip(image, 0.0, 1.0)
        surfaces[k] = bm
    return volume, surfaces


def generate_patient(config: SynthConfig, patient_index: int) -> Patient:
    """One patient, drawn from the generator seeded with ``(seed, patient_index)``."""
    rng = np.random.default_rng([config.seed, patient_index])
    patient_id = f"P{patient_index:04d}"
    sides = ["OD", "OS"] if rng.random() < config.bilateral_fraction else [str(rng.choice(["OD", "OS"]))]
    eyes = []
    for side in sides:
        eye = _draw_eye(config, rng)
        times = _visit_times(config, rng)
        if eye.conversion_time is not None:
            times = [t for t in times if t <= eye.conversion_time]
        scans = []
        for t in times:
            volume, surface = _render_visit(eye, config, t, rng)
            scans.append(
                Scan(patient_id, f"{patient_id}-{side}", t, volume, surface, config.spacing,
                     lesion_area=_lesion_area_mm2(eye, config, t))
            )
        eyes.append(EyeSeries(f"{patient_id}-{side}", patient_id, scans, eye.conversion_time))
    return Patient(patient_id, eyes)


@monitor_performance(slow_threshold=30.0, log_memory=True)
def generate_cohort(config: SynthConfig, jobs: int = 1, progress: bool = False) -> Cohort:
    """Deterministic synthetic cohort for ``config`` (independent of ``jobs``)."""
    indices = range(config.n_patients)
    if jobs > 1:
        patients = Parallel(n_jobs=jobs)(delayed(generate_patient)(config, i) for i in indices)
    else:
        patients = [generate_patient(config, i) for i in tqdm(indices, desc="patients", disable=not progress)]
    synth = asdict(config)
    synth["visit_intervals"] = list(config.visit_intervals)
    synth["image_size"] = list(config.image_size)
    cohort = Cohort(list(patients), {"generator": "synthetic", "synth": synth})
    summary = cohort.summary()
    logger.info(
        "Generated %d patients, %d eyes, %d scans, %d converting eyes",
        summary.n_patients, summary.n_eyes, summary.n_scans, summary.n_converters,
    )
    return cohort


__all__ = ["SynthConfig", "generate_cohort", "generate_patient"]
