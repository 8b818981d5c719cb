import numpy as np
import pytest

from src.autodiff.optim import Adam
from src.data.folds import FoldRoles, make_folds
from src.models import ClassifierModel, SiameseModel, classify_batch
from src.training.checkpoints import Checkpoint
from src.training.finetune import (
    DataAccessLog,
    FinetuneConfig,
    FoldData,
    SealedLabels,
    Setting,
    assemble_fold_data,
    classifier_train_step,
    finetune,
)
from src.training.grid_search import Cell, CellResult, cell_seed, grid_search, make_cells
from src.training.run_log import MetricLog
from src.utils.errors import ConfigError, LeakageError, UndefinedMetricError, ValidationError
from tests.conftest import make_cohort

SETTING = Setting(learning_rate=1e-3, hidden=8, dropout=0.0)


def _fold_data(rng, rotation=0, access_log=None, size=(16, 16)):
    access_log = access_log if access_log is not None else DataAccessLog()
    return FoldData(
        rotation=rotation,
        horizon=12.0,
        train_images=rng.random((6, *size)),
        train_labels=np.array([0, 1, 0, 1, 0, 1]),
        val_images=rng.random((4, *size)),
        val_labels=np.array([0, 1, 0, 1]),
        test_images=rng.random((4, *size)),
        test_labels=SealedLabels([0, 1, 0, 1], rotation, access_log),
    )


# ── configuration ────────────────────────────────────────────────────────────


def test_default_grid_has_eight_settings():
    grid = FinetuneConfig().grid()
    assert len(grid) == 8
    assert grid[0] == Setting(1e-4, 32, 0.0)
    assert grid[-1].key == "lr=0.001,hidden=128,dropout=0.5"


@pytest.mark.parametrize("bad", [dict(init="imagenet"), dict(dropouts=[1.0]), dict(learning_rates=[]),
                                 dict(repeats=0)])
def test_invalid_finetune_config(bad):
    with pytest.raises(ConfigError):
        FinetuneConfig(**bad)


# ── fold data ────────────────────────────────────────────────────────────────


def test_assemble_fold_data_splits_by_patient():
    cohort = make_cohort({f"P{i}": [([0, 6, 12], 18.0 if i % 2 else None)] for i in range(6)})
    folds = make_folds(cohort, k=3, seed=0)
    log = DataAccessLog()
    data = assemble_fold_data(cohort, folds.roles(0), 6, access_log=log)

    assert data.counts() == {"n_train": 2, "n_train_pos": 1, "n_val": 2, "n_val_pos": 1, "n_test": 2}
    assert data.train_images.shape == (2, 16, 16)
    assert {eye.split("-")[0] for eye in data.test_eyes} == set(folds.folds[0])
    assert log.events == []


def test_sealed_labels_log_every_reveal():
    log = DataAccessLog()
    labels = SealedLabels([1, 0], rotation=3, access_log=log)
    assert len(labels) == 2
    assert labels.has_both_classes()
    assert not SealedLabels([1, 1], rotation=3, access_log=log).has_both_classes()
    assert log.events == []
    np.testing.assert_array_equal(labels.reveal("scoring"), [1, 0])
    assert log.events == [{"event": "reveal_test_labels", "rotation": 3, "reason": "scoring"}]


def test_fold_roles_with_shared_patient_rejected():
    cohort = make_cohort({"A": [([0, 6], None)], "B": [([0, 6], 9.0)]})
    with pytest.raises(LeakageError):
        assemble_fold_data(cohort, FoldRoles(0, ("A",), ("B",), ("A",)), 6)


# ── fine-tuning ──────────────────────────────────────────────────────────────


def test_classifier_overfits_four_samples(rng, toy_encoder_config):
    images = rng.random((4, 16, 16))
    labels = np.array([0, 1, 1, 0])
    model = ClassifierModel(toy_encoder_config, hidden=16, seed=0)
    optimizer = Adam(model.parameters(), lr=3e-3)
    for _ in range(150):
        classifier_train_step(model, optimizer, images, labels)
    predicted = (classify_batch(images, model) > 0.5).astype(int)
    np.testing.assert_array_equal(predicted, labels)


def test_finetune_keeps_best_validation_epoch(mocker, rng, toy_encoder_config):
    mocker.patch("src.training.finetune.roc_auc", side_effect=[0.6, 0.8, 0.7])
    log = MetricLog()
    result = finetune(None, _fold_data(rng), FinetuneConfig(epochs=3, batch_size=4), SETTING, toy_encoder_config,
                      seed=1, log=log)

    assert result.val_auc == [0.6, 0.8, 0.7]
    assert result.best_epoch == 2
    assert result.best_val_auc == 0.8
    assert result.checkpoint.step == 2
    assert result.test_scores.shape == (4,)
    assert list(log.select(metric="roc_auc")["value"]) == [0.6, 0.8, 0.7]


def test_finetune_does_not_read_test_labels(rng, toy_encoder_config):
    access_log = DataAccessLog()
    finetune(None, _fold_data(rng, access_log=access_log), FinetuneConfig(epochs=1), SETTING, toy_encoder_config)
    assert access_log.events == []


def test_single_class_validation_set_raises(rng, toy_encoder_config):
    data = _fold_data(rng)
    data.val_labels = np.zeros(4, dtype=int)
    with pytest.raises(UndefinedMetricError, match="fold seed or horizon"):
        finetune(None, data, FinetuneConfig(epochs=1), SETTING, toy_encoder_config)


def test_image_size_mismatch_raises(rng, toy_encoder_config):
    with pytest.raises(ValidationError):
        finetune(None, _fold_data(rng, size=(24, 24)), FinetuneConfig(epochs=1), SETTING, toy_encoder_config)


def test_finetune_starts_from_transferred_encoder(mocker, rng, toy_encoder_config):
    source = SiameseModel(toy_encoder_config, seed=7)
    ckpt = Checkpoint(source.state_dict(), source.architecture(), 10, "l2", 1.0)
    transfer = mocker.patch("src.training.finetune.transfer_encoder", wraps=lambda w, m: m)
    finetune(ckpt, _fold_data(rng), FinetuneConfig(epochs=1), SETTING, toy_encoder_config)
    assert transfer.call_args.args[0] is ckpt.weights


def test_frozen_encoder_keeps_encoder_weights(rng, toy_encoder_config):
    source = SiameseModel(toy_encoder_config, seed=7)
    config = FinetuneConfig(epochs=2, freeze_encoder=True)
    result = finetune(source, _fold_data(rng), config, SETTING, toy_encoder_config)
    np.testing.assert_array_equal(result.checkpoint.weights["encoder.embed.weight"],
                                  source.encoder.embed.weight.data)


# ── grid search ──────────────────────────────────────────────────────────────


def _grid_config(**overrides):
    values = dict(learning_rates=[1e-3, 1e-2], hidden_widths=[8], dropouts=[0.0], repeats=2, epochs=1, seed=5)
    values.update(overrides)
    return FinetuneConfig(**values)


def test_cells_cover_grid_and_seeds_are_stable():
    cells = make_cells(_grid_config(), rotations=[0, 1, 2])
    assert len(cells) == 2 * 3 * 2
    assert len({c.seed for c in cells}) == len(cells)
    assert cells[4].seed == cell_seed(5, cells[4].setting_index, cells[4].rotation, cells[4].repeat)


def test_grid_search_selects_higher_validation_auc(rng, toy_encoder_config):
    access_log = DataAccessLog()
    folds = {r: _fold_data(rng, rotation=r, access_log=access_log) for r in (0, 1)}
    seen_events = []

    def runner(cell: Cell, data, init):
        seen_events.append(list(access_log.names()))
        scores = np.array([0.1, 0.9, 0.2, 0.8])
        return CellResult(cell, 0.6 if cell.setting_index == 0 else 0.7, 1, scores, [0.5])

    result = grid_search(folds, _grid_config(), toy_encoder_config, access_log=access_log, runner=runner,
                         horizon=12, init="scratch")

    assert result.best_setting == Setting(1e-2, 8, 0.0)
    assert result.setting_scores == pytest.approx(
        {"lr=0.001,hidden=8,dropout=0": 0.6, "lr=0.01,hidden=8,dropout=0": 0.7}
    )
    assert result.n_runs == 8
    assert all(events == [] for events in seen_events)
    assert access_log.first_index("selection") < access_log.first_index("reveal_test_labels")
    assert access_log.names().count("reveal_test_labels") == 2
    assert result.cv_report.mean["roc_auc"] == pytest.approx(1.0)
    assert result.cv_report.meta["horizon"] == 12
    counts = result.fold_metrics[result.fold_metrics["metric"] == "n_test"]
    assert list(counts["value"]) == [4.0, 4.0]


def test_grid_search_ties_pick_first_setting(rng, toy_encoder_config):
    folds = {r: _fold_data(rng, rotation=r) for r in (0, 1)}
    runner = lambda cell, data, init: CellResult(cell, 0.5, 1, np.array([0.1, 0.9, 0.2, 0.8]))  # noqa: E731
    result = grid_search(folds, _grid_config(), toy_encoder_config, runner=runner)
    assert result.best_setting == Setting(1e-3, 8, 0.0)


def test_grid_search_needs_two_rotations(rng, toy_encoder_config):
    with pytest.raises(ValidationError):
        grid_search({0: _fold_data(rng)}, _grid_config(), toy_encoder_config, runner=lambda *a: None)


def test_single_class_test_fold_fails_before_training(mocker, rng, toy_encoder_config):
    access_log = DataAccessLog()
    folds = {r: _fold_data(rng, rotation=r, access_log=access_log) for r in (0, 1)}
    folds[1].test_labels = SealedLabels([0, 0, 0, 0], 1, access_log)
    runner = mocker.Mock()

    with pytest.raises(UndefinedMetricError, match=r"test folds \[1\]"):
        grid_search(folds, _grid_config(), toy_encoder_config, access_log=access_log, runner=runner)
    runner.assert_not_called()
    assert access_log.events == []


def test_grid_search_end_to_end(rng, toy_encoder_config):
    folds = {r: _fold_data(rng, rotation=r) for r in (0, 1)}
    config = _grid_config(learning_rates=[1e-3], repeats=1)
    result = grid_search(folds, config, toy_encoder_config)
    assert result.n_runs == 2
    assert set(result.cv_report.metrics) == {"roc_auc", "average_precision"}
    assert 0.0 <= result.cv_report.mean["roc_auc"] <= 1.0
