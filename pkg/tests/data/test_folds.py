import json

import pytest

from src.data.folds import (
    FOLDS_FILENAME,
    FoldAssignment,
    assert_disjoint,
    load_folds,
    make_folds,
    save_folds,
    split_cohort,
)
from src.utils.errors import InsufficientDataError, LeakageError, ValidationError
from tests.conftest import make_cohort


def _cohort(n_patients, n_converters=0):
    return make_cohort(
        {f"P{i:02d}": [([0, 6], 12.0 if i < n_converters else None)] for i in range(n_patients)},
        size=(16, 16),
        n_bscans=1,
    )


def test_twelve_patients_make_six_pairs():
    folds = make_folds(_cohort(12), k=6, seed=0)
    assert [len(f) for f in folds.folds] == [2] * 6


def test_converters_are_spread_one_per_fold():
    cohort = _cohort(30, n_converters=6)
    folds = make_folds(cohort, k=6, seed=4)
    converters = {p.patient_id for p in cohort.patients if p.is_converter}
    assert [len(set(f) & converters) for f in folds.folds] == [1] * 6
    assert sorted(len(f) for f in folds.folds) == [5] * 6


def test_every_patient_in_exactly_one_fold():
    cohort = _cohort(17, n_converters=5)
    folds = make_folds(cohort, k=6, seed=1)
    assert folds.patient_ids == sorted(cohort.patient_ids)
    for i, fold in enumerate(folds.folds):
        assert all(folds.fold_of(pid) == i for pid in fold)
    with pytest.raises(KeyError):
        folds.fold_of("nobody")


def test_folds_depend_only_on_seed():
    cohort = _cohort(18, n_converters=4)
    assert make_folds(cohort, 6, seed=3) == make_folds(cohort, 6, seed=3)
    assert make_folds(cohort, 6, seed=3) != make_folds(cohort, 6, seed=5)


def test_too_few_patients_raises():
    with pytest.raises(InsufficientDataError):
        make_folds(_cohort(4), k=6)


def test_rotation_roles_are_disjoint_and_cover_cohort():
    folds = make_folds(_cohort(12, n_converters=3), k=6, seed=0)
    for r in range(6):
        roles = folds.roles(r)
        assert set(roles.test) == set(folds.folds[r])
        assert set(roles.val) == set(folds.folds[(r + 1) % 6])
        assert len(roles.train) == 8
        assert set(roles.train) | set(roles.val) | set(roles.test) == set(folds.patient_ids)
    with pytest.raises(ValidationError):
        folds.roles(6)


def test_split_cohort_builds_sub_cohorts():
    cohort = _cohort(12)
    train, val, test = split_cohort(cohort, make_folds(cohort, 6, seed=0).roles(2))
    assert (len(train), len(val), len(test)) == (8, 2, 2)


def test_assert_disjoint_detects_leakage():
    assert_disjoint(["a", "b"], ["c"], ["d"])
    with pytest.raises(LeakageError):
        assert_disjoint(["a", "b"], ["c"], ["b"])


def test_fold_file_roundtrip(tmp_path):
    folds = make_folds(_cohort(12), 6, seed=2)
    path = save_folds(folds, tmp_path)
    assert path.name == FOLDS_FILENAME
    assert load_folds(tmp_path) == folds


def test_fold_file_with_repeated_patient_rejected(tmp_path):
    (tmp_path / FOLDS_FILENAME).write_text(json.dumps({"k": 2, "seed": 0, "folds": [["a", "b"], ["b"]]}))
    with pytest.raises(LeakageError):
        load_folds(tmp_path)


def test_missing_fold_file_points_to_folds_command(tmp_path):
    with pytest.raises(FileNotFoundError, match="folds"):
        load_folds(tmp_path)


def test_from_dict_checks_fold_count():
    with pytest.raises(ValidationError):
        FoldAssignment.from_dict({"k": 3, "seed": 0, "folds": [["a"], ["b"]]})
