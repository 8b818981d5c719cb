"""Pretraining, fine-tuning, grid search, checkpoints and metric logs."""

from .checkpoints import Checkpoint, CheckpointSelector, load_best, write_best_marker
from .finetune import (
    DataAccessLog,
    FinetuneConfig,
    FoldData,
    SealedLabels,
    Setting,
    assemble_fold_data,
    finetune,
)
from .grid_search import GridSearchResult, grid_search
from .pretrain import PretrainConfig, pretrain_autoencoder, pretrain_siamese
from .run_log import MetricLog, read_metric_log

__all__ = [
    "Checkpoint",
    "CheckpointSelector",
    "DataAccessLog",
    "FinetuneConfig",
    "FoldData",
    "GridSearchResult",
    "MetricLog",
    "PretrainConfig",
    "SealedLabels",
    "Setting",
    "assemble_fold_data",
    "finetune",
    "grid_search",
    "load_best",
    "pretrain_autoencoder",
    "pretrain_siamese",
    "read_metric_log",
    "write_best_marker",
]
