from typing import Optional, Sequence

import numpy as np
import pytest

from src.data.cohort import Cohort, EyeSeries, Patient, PixelSpacing, Scan
from src.data.preprocessing import PreprocessConfig, preprocess_cohort
from src.data.synthesis import SynthConfig, generate_cohort
from src.models.encoder import EncoderConfig


def make_eye(
    patient_id: str,
    side: str,
    times: Sequence[float],
    conversion_time: Optional[float] = None,
    size=(16, 16),
    n_bscans: int = 2,
    seed: int = 0,
) -> EyeSeries:
    """Eye whose images brighten with time, so intervals are learnable from pixels."""
    rng = np.random.default_rng(seed)
    h, w = size
    scans = []
    for t in times:
        volume = 0.02 * t + 0.05 * rng.standard_normal((n_bscans, h, w))
        surface = np.full((n_bscans, w), 0.8 * h - 0.5)
        scans.append(Scan(patient_id, f"{patient_id}-{side}", t, volume, surface, PixelSpacing(0.5 / h, 6.0 / w)))
    return EyeSeries(f"{patient_id}-{side}", patient_id, scans, conversion_time)


def make_cohort(spec, size=(16, 16), n_bscans: int = 2) -> Cohort:
    """Cohort from ``{patient_id: [(times, conversion_time), ...]}``."""
    patients = []
    for i, (pid, eyes) in enumerate(spec.items()):
        series = [
            make_eye(pid, side, times, conv, size=size, n_bscans=n_bscans, seed=10 * i + j)
            for j, ((times, conv), side) in enumerate(zip(eyes, ("OD", "OS")))
        ]
        patients.append(Patient(pid, series))
    return Cohort(patients)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_encoder_config():
    return EncoderConfig(block_channels=[4, 8, 8], layers_per_block=2, embedding_dim=16, input_size=(16, 16))


@pytest.fixture
def toy_dense_config():
    return EncoderConfig(variant="dense", block_channels=[4, 8, 8], layers_per_block=2, embedding_dim=16,
                         input_size=(16, 16))


@pytest.fixture(scope="session")
def tiny_synth_config():
    return SynthConfig(n_patients=12, image_size=(24, 32), n_bscans=3, seed=0)


@pytest.fixture(scope="session")
def tiny_raw_cohort(tiny_synth_config):
    return generate_cohort(tiny_synth_config)


@pytest.fixture(scope="session")
def tiny_cohort(tiny_raw_cohort):
    """Synthetic cohort preprocessed to 16x16 B-scans."""
    return preprocess_cohort(tiny_raw_cohort, PreprocessConfig(out_size=(16, 16)))


@pytest.fixture
def small_cohort():
    """Six hand-built patients: three converters, three stable, all with several visits."""
    return make_cohort({
        "P0": [([0, 6, 12, 18], 24.0), ([0, 6, 12], None)],
        "P1": [([0, 3, 9, 15], None)],
        "P2": [([0, 6, 12], 20.0)],
        "P3": [([0, 6, 12, 18, 24], None)],
        "P4": [([0, 3, 6, 12], 16.0), ([0, 6], None)],
        "P5": [([0, 12, 24], None)],
    })
