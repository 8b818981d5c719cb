"""
On-disk cohort format: one JSON manifest plus raw little-endian image files.

Layout of a cohort directory:
- manifest.json: schema version, cohort summary, generator metadata, and for every
  patient -> eye -> scan the acquisition time (months), conversion time, pixel
  spacing, ground-truth lesion area, volume shape and file references.
- images/<eye_id>/<time>_b<k>.f32: one B-scan, float32 little-endian, row-major,
  dimensions taken from the manifest.
- images/<eye_id>/<time>_surface.f64: Bruch's membrane rows of every B-scan,
  float64 little-endian, shape (n_bscans, width).

Key Functions:
- write_cohort: Serialize a Cohort (refuses a non-empty directory unless forced)
- read_cohort: Load a Cohort back, validating schema version and file sizes
- ensure_output_dir: Shared "empty directory or --force" rule for every command

Manifests are written with sorted keys and fixed indentation, so the same cohort
always produces a byte-identical manifest.
"""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from src.data.cohort import Cohort, EyeSeries, Patient, PixelSpacing, Scan
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_FILENAME = "manifest.json"
IMAGES_DIRNAME = "images"
_IMAGE_DTYPE = np.dtype("<f4")
_SURFACE_DTYPE = np.dtype("<f8")


def ensure_output_dir(path: Union[str, Path], force: bool = False) -> Path:
    """Create ``path`` or accept it if empty; a non-empty directory needs ``force``.

    Raises:
        ValidationError: ``path`` exists, is not empty and ``force`` is False.
    """
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise ValidationError(f"output path {path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise ValidationError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _time_tag(t: float) -> str:
    return f"t{t:07.2f}".replace(".", "p")


def _scan_entry(scan: Scan, root: Path) -> Dict[str, Any]:
    eye_dir = Path(IMAGES_DIRNAME) / scan.eye_id
    (root / eye_dir).mkdir(parents=True, exist_ok=True)
    tag = _time_tag(scan.t)
    bscans = []
    for k in range(scan.n_bscans):
        rel = eye_dir / f"{tag}_b{k}.f32"
        (root / rel).write_bytes(np.ascontiguousarray(scan.volume[k], dtype=_IMAGE_DTYPE).tobytes())
        bscans.append(rel.as_posix())
    entry: Dict[str, Any] = {
        "t": scan.t,
        "shape": [scan.n_bscans, scan.height, scan.width],
        "bscans": bscans,
        "spacing": None if scan.spacing is None else {
            "axial_mm": scan.spacing.axial_mm,
            "lateral_mm": scan.spacing.lateral_mm,
        },
        "lesion_area_mm2": scan.lesion_area,
        "surface": None,
    }
    if scan.baseline_surface is not None:
        rel = eye_dir / f"{tag}_surface.f64"
        (root / rel).write_bytes(np.ascontiguousarray(scan.baseline_surface, dtype=_SURFACE_DTYPE).tobytes())
        entry["surface"] = rel.as_posix()
    return entry


def write_cohort(cohort: Cohort, out_dir: Union[str, Path], force: bool = False) -> Path:
    """Write ``cohort`` under ``out_dir`` and return the manifest path."""
    root = ensure_output_dir(out_dir, force=force)
    if force:
        shutil.rmtree(root / IMAGES_DIRNAME, ignore_errors=True)

    patients: List[Dict[str, Any]] = []
    for patient in cohort.patients:
        eyes = []
        for eye in patient.eyes:
            eyes.append({
                "eye_id": eye.eye_id,
                "conversion_time": eye.conversion_time,
                "scans": [_scan_entry(scan, root) for scan in eye.scans],
            })
        patients.append({"patient_id": patient.patient_id, "eyes": eyes})

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "image_format": {"dtype": "float32", "byte_order": "little", "order": "row-major"},
        "summary": cohort.summary().as_dict(),
        "meta": cohort.meta,
        "patients": patients,
    }
    path = root / MANIFEST_FILENAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote cohort manifest %s (%d patients)", path, len(patients))
    return path


def _read_raw(path: Path, dtype: np.dtype, shape) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"Cohort file not found: {path}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise ValidationError(f"{path} holds {len(raw)} bytes, manifest implies {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def read_cohort(cohort_dir: Union[str, Path]) -> Cohort:
    """Load a cohort written by ``write_cohort``.

    Raises:
        FileNotFoundError: manifest or a referenced file is missing.
        ValidationError: unsupported schema version or a file of the wrong size.
    """
    root = Path(cohort_dir)
    manifest_path = root / MANIFEST_FILENAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"Cohort manifest not found: {manifest_path} (run the 'synth' command first)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported cohort schema version {version!r} (expected {SCHEMA_VERSION})")

    patients = []
    for p in manifest["patients"]:
        eyes = []
        for e in p["eyes"]:
            scans = []
            for s in e["scans"]:
                n, h, w = s["shape"]
                volume = np.stack([_read_raw(root / rel, _IMAGE_DTYPE, (h, w)) for rel in s["bscans"]]) \
                    if n else np.zeros((0, h, w), dtype=np.float32)
                surface = _read_raw(root / s["surface"], _SURFACE_DTYPE, (n, w)) if s.get("surface") else None
                spacing = PixelSpacing(**s["spacing"]) if s.get("spacing") else None
                scans.append(Scan(p["patient_id"], e["eye_id"], s["t"], volume.astype(np.float32, copy=False),
                                  surface, spacing, s.get("lesion_area_mm2")))
            eyes.append(EyeSeries(e["eye_id"], p["patient_id"], scans, e.get("conversion_time")))
        patients.append(Patient(p["patient_id"], eyes))

    cohort = Cohort(patients, manifest.get("meta", {}))
    logger.info("Loaded cohort from %s: %d patients", root, len(cohort))
    return cohort


__all__ = ["MANIFEST_FILENAME", "SCHEMA_VERSION", "ensure_output_dir", "read_cohort", "write_cohort"]
