"""Conversion classifier training: from scratch or from a transferred encoder.

DESIGN NOTE:
Fold data keeps test labels sealed in ``SealedLabels``. Training and epoch selection
only see training and validation labels; test images are scored by the selected
weights, and their labels are revealed later by the grid search once hyperparameter
selection is logged. Every reveal is recorded in a ``DataAccessLog``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.autodiff import ops
from src.autodiff.optim import Adam
from src.autodiff.tensor import Tape, Tensor
from src.data.cohort import Cohort
from src.data.folds import FoldRoles, assert_disjoint, split_cohort
from src.data.selection import SelectedVisit, central_bscan, check_horizon, select_visits
from src.evaluation.classification import roc_auc
from src.models.encoder import EncoderConfig
from src.models.networks import ClassifierModel, Network, classify_batch, transfer_encoder
from src.training.checkpoints import Checkpoint, CheckpointSelector
from src.training.run_log import MetricLog
from src.utils.errors import InsufficientDataError, UndefinedMetricError, ValidationError
from src.utils.validation import require, validate_choice, validate_positive, validate_probability

logger = logging.getLogger(__name__)

INIT_MODES = ("scratch", "ae", "ssl")
INIT_LABELS = {"scratch": "Training from scratch (i)", "ae": "OCT autoencoder (ii)", "ssl": "Self-supervised"}
EVAL_CHUNK = 64


@dataclass(frozen=True)
class Setting:
    """One hyperparameter combination of the grid."""

    learning_rate: float
    hidden: int
    dropout: float

    @property
    def key(self) -> str:
        return f"lr={self.learning_rate:g},hidden={self.hidden},dropout={self.dropout:g}"


@dataclass
class FinetuneConfig:
    epochs: int = 20
    learning_rates: List[float] = field(default_factory=lambda: [1e-4, 1e-3])
    hidden_widths: List[int] = field(default_factory=lambda: [32, 128])
    dropouts: List[float] = field(default_factory=lambda: [0.0, 0.5])
    repeats: int = 5
    batch_size: int = 16
    seed: int = 0
    init: str = "scratch"
    freeze_encoder: bool = False

    def __post_init__(self) -> None:
        self.learning_rates = [float(v) for v in self.learning_rates]
        self.hidden_widths = [int(v) for v in self.hidden_widths]
        self.dropouts = [float(v) for v in self.dropouts]
        require(
            validate_positive("finetune.epochs", self.epochs),
            validate_positive("finetune.repeats", self.repeats),
            validate_positive("finetune.batch_size", self.batch_size),
            validate_choice("finetune.init", self.init, INIT_MODES),
            (bool(self.learning_rates and self.hidden_widths and self.dropouts), "finetune grid must be non-empty"),
            *(validate_positive("finetune.learning_rates", v) for v in self.learning_rates),
            *(validate_positive("finetune.hidden_widths", v) for v in self.hidden_widths),
            *(validate_probability("finetune.dropouts", v) for v in self.dropouts),
        )

    def grid(self) -> List[Setting]:
        return [Setting(lr, h, d) for lr, h, d in itertools.product(self.learning_rates, self.hidden_widths,
                                                                       self.dropouts)]

    def to_dict(self) -> dict:
        return asdict(self)


# ── data access ──


@dataclass
class DataAccessLog:
    """Ordered record of protocol events (label reveals, selection)."""

    events: List[Dict[str, Any]] = field(default_factory=list)

    def record(self, event: str, **detail) -> None:
        self.events.append({"event": event, **detail})
        logger.debug("data access: %s %s", event, detail)

    def names(self) -> List[str]:
        return [e["event"] for e in self.events]

    def first_index(self, event: str) -> Optional[int]:
        names = self.names()
        return names.index(event) if event in names else None


class SealedLabels:
    """Test labels of one rotation; reading them is an explicit, logged act."""

    def __init__(self, labels: Sequence[int], rotation: int, access_log: DataAccessLog):
        self._labels = np.asarray(labels, dtype=int).copy()
        self.rotation = rotation
        self.access_log = access_log

    def __len__(self) -> int:
        return int(self._labels.size)

    def reveal(self, reason: str) -> np.ndarray:
        self.access_log.record("reveal_test_labels", rotation=self.rotation, reason=reason)
        return self._labels.copy()

    def has_both_classes(self) -> bool:
        """Whether a ROC AUC is defined on these labels; reveals no individual label."""
        return bool(0 < self._labels.sum() < self._labels.size)


@dataclass
class FoldData:
    rotation: int
    horizon: float
    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    test_images: np.ndarray
    test_labels: SealedLabels
    test_eyes: List[str] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        return {
            "n_train": int(self.train_labels.size),
            "n_train_pos": int(self.train_labels.sum()),
            "n_val": int(self.val_labels.size),
            "n_val_pos": int(self.val_labels.sum()),
            "n_test": len(self.test_labels),
        }


def _stack(visits: List[SelectedVisit]) -> Tuple[np.ndarray, np.ndarray]:
    if not visits:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=int)
    images = np.stack([central_bscan(v.scan) for v in visits])
    return images, np.array([v.label for v in visits], dtype=int)


def assemble_fold_data(
    cohort: Cohort,
    roles: FoldRoles,
    horizon: float,
    access_log: Optional[DataAccessLog] = None,
    study_end_time: Optional[float] = None,
    allow_any: bool = False,
) -> FoldData:
    """Central B-scan and label of the selected visit of every eye, split by rotation roles.

    Raises:
        LeakageError: a patient appears in more than one split.
        InsufficientDataError: no training sample for this horizon.
    """
    horizon = check_horizon(horizon, allow_any)
    access_log = access_log if access_log is not None else DataAccessLog()
    train, val, test = split_cohort(cohort, roles)
    visits = [select_visits(part, horizon, study_end_time, allow_any) for part in (train, val, test)]
    assert_disjoint(*({v.patient_id for v in split} for split in visits))

    (train_x, train_y), (val_x, val_y), (test_x, test_y) = (_stack(v) for v in visits)
    if not train_y.size:
        raise InsufficientDataError(f"rotation {roles.rotation}: no training sample for the {horizon:g}-month horizon")
    data = FoldData(
        rotation=roles.rotation,
        horizon=horizon,
        train_images=train_x,
        train_labels=train_y,
        val_images=val_x,
        val_labels=val_y,
        test_images=test_x,
        test_labels=SealedLabels(test_y, roles.rotation, access_log),
        test_eyes=[v.eye_id for v in visits[2]],
    )
    logger.info("Rotation %d, horizon %g: %s", roles.rotation, horizon, data.counts())
    return data


# ── training ──


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    val_auc: List[float]
    best_epoch: int
    val_scores: np.ndarray
    test_scores: np.ndarray

    @property
    def best_val_auc(self) -> float:
        return self.val_auc[self.best_epoch - 1]


def _scores(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    if not images.shape[0]:
        return np.zeros(0)
    return np.concatenate([classify_batch(images[i:i + EVAL_CHUNK], model)
                           for i in range(0, images.shape[0], EVAL_CHUNK)])


def classifier_train_step(model: ClassifierModel, optimizer: Adam, images: np.ndarray, labels: np.ndarray) -> float:
    """One cross-entropy Adam update on (N, H, W) images; returns the batch loss."""
    model.train()
    optimizer.zero_grad()
    x = Tensor(images[..., None], dtype=model.out.weight.dtype)
    with Tape() as tape:
        loss = ops.cross_entropy(model(x), labels)
    tape.backward(loss)
    optimizer.step()
    return loss.item()


def _init_weights(init: Union[Checkpoint, Network, Mapping[str, np.ndarray], None]):
    if isinstance(init, Checkpoint):
        return init.weights
    return init


def finetune(
    init: Union[Checkpoint, Network, Mapping[str, np.ndarray], None],
    fold_data: FoldData,
    config: FinetuneConfig,
    setting: Setting,
    encoder_config: EncoderConfig,
    seed: int = 0,
    dtype=np.float64,
    log: Optional[MetricLog] = None,
    progress: bool = False,
) -> FinetuneResult:
    """Train a classifier for ``config.epochs`` epochs and keep the best-validation-AUC epoch.

    Args:
        init: Pretrained weights whose encoder is transferred, or None to train from scratch
        fold_data: Samples of one fold rotation
        setting: Learning rate, hidden width and dropout of this run
        seed: Seed for initialisation, shuffling and dropout masks

    Returns:
        FinetuneResult with the selected checkpoint, per-epoch validation AUC and the
        selected model's validation and test scores

    Raises:
        UndefinedMetricError: validation set has a single class
    """
    n_pos = int(fold_data.val_labels.sum())
    if n_pos == 0 or n_pos == fold_data.val_labels.size:
        raise UndefinedMetricError(
            f"rotation {fold_data.rotation}: validation set has a single class ({fold_data.val_labels.size} samples, "
            f"{n_pos} positive); validation AUC is undefined. Use another fold seed or horizon."
        )
    if fold_data.train_images.shape[1:] != tuple(encoder_config.input_size):
        raise ValidationError(
            f"fold images are {fold_data.train_images.shape[1:]}, encoder expects {tuple(encoder_config.input_size)}"
        )

    model = ClassifierModel(encoder_config, hidden=setting.hidden, dropout=setting.dropout, seed=seed, dtype=dtype)
    weights = _init_weights(init)
    if weights is not None:
        transfer_encoder(weights, model)
    params = model.head_parameters() if config.freeze_encoder else model.parameters()
    optimizer = Adam(params, lr=setting.learning_rate)
    rng = np.random.default_rng([seed, 101])
    selector = CheckpointSelector("roc_auc", mode="max")

    n = fold_data.train_labels.size
    epochs = tqdm(range(1, config.epochs + 1), desc=f"finetune r{fold_data.rotation}", disable=not progress,
                  leave=False)
    for epoch in epochs:
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            losses.append(classifier_train_step(model, optimizer, fold_data.train_images[idx],
                                                fold_data.train_labels[idx]))
        auc = roc_auc(fold_data.val_labels, _scores(model, fold_data.val_images))
        selector.offer(epoch, auc, model.state_dict)
        if log is not None:
            log.log(fold_data.rotation, epoch, "train", "cross_entropy", float(np.mean(losses)))
            log.log(fold_data.rotation, epoch, "val", "roc_auc", auc)
        logger.debug("rotation %d %s epoch %d: loss %.4f, val AUC %.4f",
                     fold_data.rotation, setting.key, epoch, float(np.mean(losses)), auc)

    model.load_state_dict(selector.best_state)
    checkpoint = selector.checkpoint(model.architecture(), rotation=fold_data.rotation, setting=setting.key,
                                     seed=int(seed))
    return FinetuneResult(
        checkpoint=checkpoint,
        val_auc=[value for _, value in selector.history],
        best_epoch=int(selector.best_step),
        val_scores=_scores(model, fold_data.val_images),
        test_scores=_scores(model, fold_data.test_images),
    )


__all__ = [
    "DataAccessLog",
    "FinetuneConfig",
    "FinetuneResult",
    "FoldData",
    "INIT_LABELS",
    "INIT_MODES",
    "SealedLabels",
    "Setting",
    "assemble_fold_data",
    "classifier_train_step",
    "finetune",
]
