"""Pretraining of the shared encoder.

DESIGN NOTE:
Two pretraining routes produce encoder weights for transfer:
- siamese: batches of same-eye scan pairs drawn on the fly by ``PairSampler``; the
  network regresses the signed interval and is trained with the squared-error loss.
- autoencoder: batches of single B-scans (no pairing, no time information) and a
  per-pixel mean squared reconstruction error.
Both run a fixed number of steps with validation every ``validate_every`` steps and keep the
weights of the lowest validation loss. There is no epoch structure.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from src.autodiff import ops
from src.autodiff.optim import Adam
from src.autodiff.tensor import Tape, Tensor
from src.data.cohort import Cohort
from src.data.folds import assert_disjoint
from src.data.sampling import PairBatch, PairSampler, stack_pairs, validation_pairs
from src.models.encoder import EncoderConfig
from src.models.networks import AutoencoderModel, SiameseModel, predict_pairs, reconstruct
from src.training.checkpoints import Checkpoint, CheckpointSelector
from src.training.run_log import MetricLog
from src.utils.errors import InsufficientDataError, NonFiniteError
from src.utils.performance import monitor_performance
from src.utils.validation import require, validate_positive

logger = logging.getLogger(__name__)

EVAL_CHUNK = 32


@dataclass
class PretrainConfig:
    """Step count and optimizer settings shared by both pretraining routes."""

    total_steps: int = 20000
    validate_every: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    val_pairs: int = 512
    head_hidden: int = 64

    def __post_init__(self) -> None:
        require(
            validate_positive("pretrain.total_steps", self.total_steps),
            validate_positive("pretrain.validate_every", self.validate_every),
            validate_positive("pretrain.batch_size", self.batch_size),
            validate_positive("pretrain.learning_rate", self.learning_rate),
            validate_positive("pretrain.val_pairs", self.val_pairs),
            validate_positive("pretrain.head_hidden", self.head_hidden),
        )
        require(
            (self.total_steps >= self.validate_every,
             f"pretrain.total_steps ({self.total_steps}) must be >= validate_every ({self.validate_every})"),
            (self.total_steps % self.validate_every == 0,
             f"pretrain.validate_every ({self.validate_every}) must divide total_steps ({self.total_steps})"),
        )

    @property
    def n_validations(self) -> int:
        return self.total_steps // self.validate_every

    def to_dict(self) -> dict:
        return asdict(self)


# ── siamese route ──


def siamese_train_step(model: SiameseModel, optimizer: Adam, batch: PairBatch) -> float:
    """One Adam update on a pair batch; returns the batch loss before the update."""
    model.train()
    optimizer.zero_grad()
    dtype = model.head.fc1.weight.dtype
    with Tape() as tape:
        pred = model(Tensor(batch.a, dtype=dtype), Tensor(batch.b, dtype=dtype))
        loss = ops.l2_loss(pred, batch.delta_t)
    tape.backward(loss)
    optimizer.step()
    return loss.item()


def pair_predictions(model: SiameseModel, batch: PairBatch, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Eval-mode interval predictions for every pair of ``batch``."""
    out = [predict_pairs(batch.a[i:i + chunk], batch.b[i:i + chunk], model) for i in range(0, len(batch), chunk)]
    return np.concatenate(out)


def siamese_validation_loss(model: SiameseModel, batch: PairBatch) -> float:
    pred = pair_predictions(model, batch)
    return float(np.mean((pred - batch.delta_t) ** 2))


# ── autoencoder route ──


class ImageSampler:
    """Draws single B-scans: eye uniformly, visit uniformly, B-scan index uniformly."""

    def __init__(self, cohort: Cohort, seed: int):
        self.eyes = [eye for eye in cohort.eyes() if eye.scans]
        if not self.eyes:
            raise InsufficientDataError("cohort has no scans to sample images from")
        self.rng = np.random.default_rng(seed)

    def draw(self) -> np.ndarray:
        eye = self.eyes[int(self.rng.integers(len(self.eyes)))]
        scan = eye.scans[int(self.rng.integers(len(eye.scans)))]
        return scan.bscan(int(self.rng.integers(scan.n_bscans)))

    def batch(self, size: int, dtype=np.float64) -> np.ndarray:
        return np.stack([self.draw() for _ in range(size)]).astype(dtype)[..., None]


def autoencoder_train_step(model: AutoencoderModel, optimizer: Adam, images: np.ndarray) -> float:
    """One Adam update on an image batch (N, H, W, 1); returns the batch MSE."""
    model.train()
    optimizer.zero_grad()
    dtype = model.decoder.fc.weight.dtype
    x = Tensor(images, dtype=dtype)
    with Tape() as tape:
        loss = ops.mse(model(x), images)
    tape.backward(loss)
    optimizer.step()
    return loss.item()


def reconstruction_loss(model: AutoencoderModel, images: np.ndarray, chunk: int = EVAL_CHUNK) -> float:
    errors = []
    for i in range(0, images.shape[0], chunk):
        part = images[i:i + chunk]
        errors.append(np.sum((reconstruct(part, model) - part) ** 2))
    return float(np.sum(errors) / images.size)


# ── shared loop ──


def _train_loop(
    label: str,
    model,
    optimizer: Adam,
    step_fn: Callable[[], float],
    validate_fn: Callable[[], float],
    config: PretrainConfig,
    metric: str,
    log: Optional[MetricLog],
    fold: int,
    progress: bool,
) -> CheckpointSelector:
    selector = CheckpointSelector(metric, mode="min")
    window = []
    steps = tqdm(range(1, config.total_steps + 1), desc=f"{label} fold {fold}", disable=not progress, leave=False)
    for step in steps:
        try:
            window.append(step_fn())
        except NonFiniteError as e:
            raise NonFiniteError(f"{label} training diverged at step {step}: {e}", step=step) from e
        if step % config.validate_every:
            continue
        train_loss = float(np.mean(window))
        window.clear()
        val_loss = validate_fn()
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"{label} validation {metric} is not finite at step {step}", step=step)
        improved = selector.offer(step, val_loss, model.state_dict)
        if log is not None:
            log.log(fold, step, "train", metric, train_loss)
            log.log(fold, step, "val", metric, val_loss)
        logger.info(
            "%s fold %d step %d: train %s %.5g, val %s %.5g%s",
            label, fold, step, metric, train_loss, metric, val_loss, " (best)" if improved else "",
        )
    return selector


@monitor_performance(slow_threshold=600.0, log_memory=True)
def pretrain_siamese(
    train: Cohort,
    val: Cohort,
    config: PretrainConfig,
    encoder_config: EncoderConfig,
    dtype=np.float64,
    log: Optional[MetricLog] = None,
    fold: int = 0,
    fingerprint: str = "",
    progress: bool = False,
) -> Checkpoint:
    """Train encoder and pair head on interval regression; keep the lowest validation L2.

    Args:
        train: Training patients; pairs are drawn from eyes with at least two visits
        val: Validation patients (disjoint from ``train``)
        config: Step count and optimizer settings
        encoder_config: Encoder architecture
        log: Metric log receiving train/val ``l2`` rows at each validation step
        fold: Fold rotation recorded in the log and checkpoint

    Returns:
        Checkpoint of the best validation step

    Raises:
        InsufficientDataError: a cohort has no eye with two visits
        NonFiniteError: a loss or gradient became NaN/Inf; carries the step
    """
    if not len(train):
        raise InsufficientDataError("training cohort is empty")
    assert_disjoint(train.patient_ids, val.patient_ids, ())
    sampler = PairSampler(train, seed=config.seed)
    val_batch = stack_pairs(validation_pairs(val, config.val_pairs, seed=config.seed + 1), dtype)
    model = SiameseModel(encoder_config, seed=config.seed, dtype=dtype, head_hidden=config.head_hidden)
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    logger.info(
        "Siamese pretraining fold %d: %s encoder, %d parameters, %d steps, %d validation pairs",
        fold, encoder_config.variant, model.num_parameters(), config.total_steps, len(val_batch),
    )

    selector = _train_loop(
        "siamese", model, optimizer,
        lambda: siamese_train_step(model, optimizer, sampler.batch(config.batch_size, dtype)),
        lambda: siamese_validation_loss(model, val_batch),
        config, "l2", log, fold, progress,
    )
    return selector.checkpoint(model.architecture(), fingerprint, fold=fold, route="siamese")


@monitor_performance(slow_threshold=600.0, log_memory=True)
def pretrain_autoencoder(
    train: Cohort,
    val: Cohort,
    config: PretrainConfig,
    encoder_config: EncoderConfig,
    dtype=np.float64,
    log: Optional[MetricLog] = None,
    fold: int = 0,
    fingerprint: str = "",
    progress: bool = False,
) -> Checkpoint:
    """Cross-sectional autoencoder baseline; keeps the lowest validation MSE."""
    if not len(train):
        raise InsufficientDataError("training cohort is empty")
    assert_disjoint(train.patient_ids, val.patient_ids, ())
    sampler = ImageSampler(train, seed=config.seed)
    val_images = ImageSampler(val, seed=config.seed + 1).batch(config.val_pairs, dtype)
    model = AutoencoderModel(encoder_config, seed=config.seed, dtype=dtype)
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    logger.info(
        "Autoencoder pretraining fold %d: %d parameters, %d steps, %d validation images",
        fold, model.num_parameters(), config.total_steps, val_images.shape[0],
    )

    selector = _train_loop(
        "autoencoder", model, optimizer,
        lambda: autoencoder_train_step(model, optimizer, sampler.batch(config.batch_size, dtype)),
        lambda: reconstruction_loss(model, val_images),
        config, "mse", log, fold, progress,
    )
    return selector.checkpoint(model.architecture(), fingerprint, fold=fold, route="autoencoder")


__all__ = [
    "ImageSampler",
    "PretrainConfig",
    "autoencoder_train_step",
    "pair_predictions",
    "pretrain_autoencoder",
    "pretrain_siamese",
    "reconstruction_loss",
    "siamese_train_step",
    "siamese_validation_loss",
]
