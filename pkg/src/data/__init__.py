"""Longitudinal cohort model, preprocessing, pair sampling, folds, visit selection and
the synthetic cohort generator."""

from .cohort import Cohort, CohortSummary, EyeSeries, Patient, PixelSpacing, Scan, ScanPair
from .folds import FoldAssignment, FoldRoles, load_folds, make_folds, save_folds, split_cohort
from .io_utils import read_cohort, write_cohort
from .preprocessing import PreprocessConfig, flatten_crop_resample, preprocess_cohort
from .sampling import PairSampler, sample_pair
from .selection import HORIZONS, SelectedVisit, central_bscan, select_visit, select_visits
from .synthesis import SynthConfig, generate_cohort

__all__ = [
    "Cohort",
    "CohortSummary",
    "EyeSeries",
    "FoldAssignment",
    "FoldRoles",
    "HORIZONS",
    "PairSampler",
    "Patient",
    "PixelSpacing",
    "PreprocessConfig",
    "Scan",
    "ScanPair",
    "SelectedVisit",
    "SynthConfig",
    "central_bscan",
    "flatten_crop_resample",
    "generate_cohort",
    "load_folds",
    "make_folds",
    "preprocess_cohort",
    "read_cohort",
    "sample_pair",
    "save_folds",
    "select_visit",
    "select_visits",
    "split_cohort",
    "write_cohort",
]
