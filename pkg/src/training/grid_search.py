"""Hyperparameter grid search with cross-validated test evaluation.

Every cell (setting x fold rotation x repeat) fine-tunes one classifier. The setting
with the best validation AUC averaged over rotations and repeats is selected; only
after that selection is logged are the test labels revealed and the selected setting's
test scores turned into per-fold ROC AUC and average precision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.evaluation.classification import CVReport, aggregate_cv, average_precision, roc_auc
from src.models.encoder import EncoderConfig
from src.training.checkpoints import Checkpoint, best_index
from src.training.finetune import DataAccessLog, FinetuneConfig, FoldData, Setting, finetune
from src.utils.errors import UndefinedMetricError, ValidationError
from src.utils.performance import monitor_performance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cell:
    setting_index: int
    setting: Setting
    rotation: int
    repeat: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"s{self.setting_index}-r{self.rotation}-k{self.repeat}"


@dataclass
class CellResult:
    cell: Cell
    val_auc: float
    best_epoch: int
    test_scores: np.ndarray
    val_curve: List[float] = field(default_factory=list)


@dataclass
class GridSearchResult:
    best_setting: Setting
    setting_scores: Dict[str, float]
    cv_report: CVReport
    fold_metrics: pd.DataFrame
    cells: List[CellResult]

    @property
    def n_runs(self) -> int:
        return len(self.cells)


CellRunner = Callable[[Cell, FoldData, Optional[Checkpoint]], CellResult]


def cell_seed(base_seed: int, setting_index: int, rotation: int, repeat: int) -> int:
    """Seed of one cell, independent of execution order."""
    return int(np.random.SeedSequence([base_seed, setting_index, rotation, repeat]).generate_state(1)[0])


def make_cells(config: FinetuneConfig, rotations: Sequence[int]) -> List[Cell]:
    return [
        Cell(s, setting, r, k, cell_seed(config.seed, s, r, k))
        for s, setting in enumerate(config.grid())
        for r in rotations
        for k in range(config.repeats)
    ]


def finetune_cell(cell: Cell, fold_data: FoldData, init: Optional[Checkpoint], config: FinetuneConfig,
                  encoder_config: EncoderConfig, dtype=np.float64) -> CellResult:
    result = finetune(init, fold_data, config, cell.setting, encoder_config, seed=cell.seed, dtype=dtype)
    return CellResult(cell, result.best_val_auc, result.best_epoch, result.test_scores, result.val_auc)


@monitor_performance(slow_threshold=1800.0, log_memory=True)
def grid_search(
    fold_data: Mapping[int, FoldData],
    config: FinetuneConfig,
    encoder_config: EncoderConfig,
    init_checkpoints: Optional[Mapping[int, Checkpoint]] = None,
    access_log: Optional[DataAccessLog] = None,
    jobs: int = 1,
    runner: Optional[CellRunner] = None,
    dtype=np.float64,
    **meta,
) -> GridSearchResult:
    """Select the setting with the best mean validation AUC and report its CV test metrics.

    Args:
        fold_data: Samples per fold rotation
        init_checkpoints: Pretrained checkpoint per rotation, or None for training from scratch
        access_log: Receives the ``selection`` event and the test-label reveals
        jobs: Worker processes for the cells (1 runs them in this process)
        runner: Replaces the per-cell fine-tuning (used in tests)
        meta: Extra fields stored in the CV report (horizon, init mode)

    Returns:
        GridSearchResult with the selected setting and its CVReport over rotations

    Raises:
        ValidationError: fewer than two rotations.
        UndefinedMetricError: a test fold holds a single class, checked before any cell trains.
    """
    rotations = sorted(fold_data)
    if len(rotations) < 2:
        raise ValidationError(f"grid search needs at least two fold rotations, got {len(rotations)}")
    single_class = [r for r in rotations if not fold_data[r].test_labels.has_both_classes()]
    if single_class:
        raise UndefinedMetricError(
            f"test folds {single_class} hold a single class at this horizon; choose another fold seed or horizon"
        )
    access_log = access_log if access_log is not None else DataAccessLog()
    init_checkpoints = init_checkpoints or {}
    settings = config.grid()
    cells = make_cells(config, rotations)
    logger.info("Grid search: %d settings x %d rotations x %d repeats = %d runs",
                len(settings), len(rotations), config.repeats, len(cells))

    def run(cell: Cell) -> CellResult:
        init = init_checkpoints.get(cell.rotation)
        if runner is not None:
            return runner(cell, fold_data[cell.rotation], init)
        return finetune_cell(cell, fold_data[cell.rotation], init, config, encoder_config, dtype)

    if jobs > 1 and runner is None:
        results = Parallel(n_jobs=jobs)(
            delayed(finetune_cell)(c, fold_data[c.rotation], init_checkpoints.get(c.rotation), config,
                                   encoder_config, dtype)
            for c in cells
        )
    else:
        results = [run(c) for c in cells]
    by_id = {r.cell.cell_id: r for r in results}
    results = [by_id[c.cell_id] for c in cells]

    setting_scores = {}
    for s, setting in enumerate(settings):
        setting_scores[setting.key] = float(np.mean([r.val_auc for r in results if r.cell.setting_index == s]))
        logger.info("Setting %s: mean validation AUC %.4f", setting.key, setting_scores[setting.key])
    best = best_index(list(setting_scores.values()), "max")
    best_setting = settings[best]
    access_log.record("selection", setting=best_setting.key, mean_val_auc=setting_scores[best_setting.key])

    rows = []
    per_fold = []
    for rotation in rotations:
        data = fold_data[rotation]
        labels = data.test_labels.reveal("test metrics of the selected setting")
        repeats = [r for r in results if r.cell.setting_index == best and r.cell.rotation == rotation]
        aucs = [roc_auc(labels, r.test_scores) for r in repeats]
        aps = [average_precision(labels, r.test_scores) for r in repeats]
        fold_metrics = {"roc_auc": float(np.mean(aucs)), "average_precision": float(np.mean(aps))}
        per_fold.append(fold_metrics)
        counts = data.counts()
        for name, value in fold_metrics.items():
            rows.append({"fold": rotation, "metric": name, "value": value})
        for name, value in counts.items():
            rows.append({"fold": rotation, "metric": name, "value": float(value)})

    report = aggregate_cv(per_fold, setting=best_setting.key, rotations=rotations, **meta)
    logger.info("Selected %s: test ROC AUC %s, AP %s", best_setting.key, report.cell("roc_auc"),
                report.cell("average_precision"))
    return GridSearchResult(best_setting, setting_scores, report, pd.DataFrame(rows, columns=["fold", "metric", "value"]),
                            results)


__all__ = [
    "Cell",
    "CellResult",
    "GridSearchResult",
    "cell_seed",
    "finetune_cell",
    "grid_search",
    "make_cells",
]
