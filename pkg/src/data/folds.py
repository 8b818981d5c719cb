"""Patient-level cross-validation folds.

Converter patients are shuffled and dealt round-robin over the folds; the shuffled
non-converters then go one at a time to the currently smallest fold (lowest index on
ties). Fold sizes therefore differ by at most one and converters are spread as evenly
as their count allows. Rotation ``r`` tests on fold ``r``, validates on fold
``(r + 1) mod k`` and trains on the rest.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

from src.data.cohort import Cohort
from src.utils.errors import InsufficientDataError, LeakageError, ValidationError

logger = logging.getLogger(__name__)

FOLDS_FILENAME = "folds.json"
DEFAULT_K = 6


@dataclass(frozen=True)
class FoldRoles:
    rotation: int
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]


@dataclass
class FoldAssignment:
    k: int
    seed: int
    folds: List[List[str]]

    def fold_of(self, patient_id: str) -> int:
        for i, fold in enumerate(self.folds):
            if patient_id in fold:
                return i
        raise KeyError(patient_id)

    @property
    def patient_ids(self) -> List[str]:
        return sorted(pid for fold in self.folds for pid in fold)

    def roles(self, rotation: int) -> FoldRoles:
        if not 0 <= rotation < self.k:
            raise ValidationError(f"rotation must be in [0, {self.k}), got {rotation}")
        val_fold = (rotation + 1) % self.k
        train = sorted(pid for i, fold in enumerate(self.folds) if i not in (rotation, val_fold) for pid in fold)
        roles = FoldRoles(rotation, tuple(train), tuple(sorted(self.folds[val_fold])), tuple(sorted(self.folds[rotation])))
        assert_disjoint(roles.train, roles.val, roles.test)
        return roles

    def rotations(self) -> List[FoldRoles]:
        return [self.roles(r) for r in range(self.k)]

    def to_dict(self) -> Dict:
        return {"k": self.k, "seed": self.seed, "folds": [sorted(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, data: Dict) -> "FoldAssignment":
        assignment = cls(int(data["k"]), int(data["seed"]), [list(f) for f in data["folds"]])
        if len(assignment.folds) != assignment.k:
            raise ValidationError(f"fold file lists {len(assignment.folds)} folds for k={assignment.k}")
        flat = [pid for f in assignment.folds for pid in f]
        if len(flat) != len(set(flat)):
            raise LeakageError("fold file assigns a patient to more than one fold")
        return assignment


def make_folds(cohort: Cohort, k: int = DEFAULT_K, seed: int = 0) -> FoldAssignment:
    """Split the cohort's patients into ``k`` converter-stratified folds.

    Raises:
        InsufficientDataError: fewer patients than folds.
    """
    if k < 2:
        raise ValidationError(f"need at least 2 folds, got {k}")
    if len(cohort.patients) < k:
        raise InsufficientDataError(f"{len(cohort.patients)} patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    converters = sorted(p.patient_id for p in cohort.patients if p.is_converter)
    others = sorted(p.patient_id for p in cohort.patients if not p.is_converter)
    converters = [converters[i] for i in rng.permutation(len(converters))]
    others = [others[i] for i in rng.permutation(len(others))]

    folds: List[List[str]] = [[] for _ in range(k)]
    for i, pid in enumerate(converters):
        folds[i % k].append(pid)
    for pid in others:
        smallest = min(range(k), key=lambda f: (len(folds[f]), f))
        folds[smallest].append(pid)

    assignment = FoldAssignment(k, seed, [sorted(f) for f in folds])
    logger.info(
        "Made %d folds over %d patients (%d converters); sizes %s",
        k, len(cohort.patients), len(converters), [len(f) for f in assignment.folds],
    )
    return assignment


def assert_disjoint(train: Iterable[str], val: Iterable[str], test: Iterable[str]) -> None:
    """Raise ``LeakageError`` if any patient sits in more than one split."""
    train, val, test = set(train), set(val), set(test)
    overlap = (train & val) | (train & test) | (val & test)
    if overlap:
        raise LeakageError(f"patients in more than one split: {sorted(overlap)[:5]}")


def split_cohort(cohort: Cohort, roles: FoldRoles) -> Tuple[Cohort, Cohort, Cohort]:
    """(train, val, test) sub-cohorts of one rotation, checked for patient leakage."""
    assert_disjoint(roles.train, roles.val, roles.test)
    known = set(cohort.patient_ids)
    parts = []
    for ids in (roles.train, roles.val, roles.test):
        parts.append(cohort.subset(pid for pid in ids if pid in known))
    logger.info(
        "Rotation %d: %d train / %d val / %d test patients",
        roles.rotation, len(parts[0]), len(parts[1]), len(parts[2]),
    )
    return parts[0], parts[1], parts[2]


def save_folds(assignment: FoldAssignment, path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / FOLDS_FILENAME
    path.write_text(json.dumps(assignment.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote fold assignment to %s", path)
    return path


def load_folds(path: Union[str, Path]) -> FoldAssignment:
    path = Path(path)
    if path.is_dir():
        path = path / FOLDS_FILENAME
    if not path.exists():
        raise FileNotFoundError(f"fold file not found: {path} (run the 'folds' command first)")
    return FoldAssignment.from_dict(json.loads(path.read_text(encoding="utf-8")))


__all__ = [
    "DEFAULT_K",
    "FOLDS_FILENAME",
    "FoldAssignment",
    "FoldRoles",
    "assert_disjoint",
    "load_folds",
    "make_folds",
    "save_folds",
    "split_cohort",
]
