"""Checkpoints and best-metric selection.

A checkpoint is a weight file (see ``src.autodiff.serialization``) whose manifest
metadata carries the architecture descriptor, the step or epoch index, the name and
value of the selection metric, and the fingerprint of the producing run's config.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.serialization import load_weights, save_weights
from src.models.networks import Network, build_model
from src.utils.errors import CheckpointError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_STEM = "checkpoint"
BEST_MARKER = "BEST"

# selection criterion per metric name
METRIC_MODES = {"l2": "min", "mse": "min", "roc_auc": "max"}


@dataclass
class Checkpoint:
    weights: Dict[str, np.ndarray]
    architecture: Dict[str, Any]
    step: int
    metric_name: str
    metric_value: float
    fingerprint: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    def metadata(self) -> Dict[str, Any]:
        return {
            "architecture": self.architecture,
            "step": self.step,
            "metric_name": self.metric_name,
            "metric_value": self.metric_value,
            "config_fingerprint": self.fingerprint,
            "extra": self.extra,
        }

    def save(self, directory: Union[str, Path]) -> Path:
        return save_weights(Path(directory) / CHECKPOINT_STEM, self.weights, self.metadata())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        path = Path(path)
        if path.is_dir():
            path = path / CHECKPOINT_STEM
        weights, meta = load_weights(path)
        try:
            return cls(
                weights=weights,
                architecture=meta["architecture"],
                step=int(meta["step"]),
                metric_name=meta["metric_name"],
                metric_value=float(meta["metric_value"]),
                fingerprint=meta.get("config_fingerprint", ""),
                extra=meta.get("extra", {}),
            )
        except KeyError as e:
            raise CheckpointError(f"checkpoint {path} lacks metadata field {e}") from e

    def build(self, dtype=np.float64) -> Network:
        """Model with this checkpoint's architecture and weights."""
        model = build_model(self.architecture, dtype=dtype)
        model.load_state_dict(self.weights)
        return model


def best_index(values: Sequence[float], mode: str) -> int:
    """Index of the best value (first occurrence on ties)."""
    if not len(values):
        raise ValidationError("cannot select from an empty metric sequence")
    if mode not in ("min", "max"):
        raise ValidationError(f"selection mode must be 'min' or 'max', got {mode!r}")
    arr = np.asarray(values, dtype=np.float64)
    return int(np.argmin(arr) if mode == "min" else np.argmax(arr))


class CheckpointSelector:
    """Tracks the best validation value seen so far and a copy of its weights."""

    def __init__(self, metric_name: str, mode: Optional[str] = None):
        self.metric_name = metric_name
        self.mode = mode or METRIC_MODES.get(metric_name, "min")
        self.history: List[Tuple[int, float]] = []
        self.best_step: Optional[int] = None
        self.best_value: Optional[float] = None
        self.best_state: Optional[Dict[str, np.ndarray]] = None

    def _improves(self, value: float) -> bool:
        if self.best_value is None:
            return True
        return value < self.best_value if self.mode == "min" else value > self.best_value

    def offer(self, step: int, value: float, state_fn: Callable[[], Dict[str, np.ndarray]]) -> bool:
        """Record ``value`` at ``step``; keep ``state_fn()`` if it is a strict improvement."""
        self.history.append((step, float(value)))
        if not self._improves(value):
            return False
        self.best_step, self.best_value = step, float(value)
        self.best_state = copy.deepcopy(state_fn())
        return True

    def checkpoint(self, architecture: Dict[str, Any], fingerprint: str = "", **extra) -> Checkpoint:
        if self.best_state is None:
            raise CheckpointError("no validation result was recorded; nothing to checkpoint")
        return Checkpoint(self.best_state, architecture, self.best_step, self.metric_name, self.best_value,
                          fingerprint, dict(extra))


def write_best_marker(run_dir: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Save ``checkpoint`` in ``run_dir`` and point the ``BEST`` marker at it."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = checkpoint.save(run_dir)
    marker = run_dir / BEST_MARKER
    marker.write_text(
        f"{manifest.name}\nstep={checkpoint.step}\n{checkpoint.metric_name}={checkpoint.metric_value!r}\n",
        encoding="utf-8",
    )
    logger.info("Best %s=%.6g at step %d -> %s", checkpoint.metric_name, checkpoint.metric_value, checkpoint.step,
                manifest)
    return marker


def load_best(run_dir: Union[str, Path]) -> Checkpoint:
    run_dir = Path(run_dir)
    marker = run_dir / BEST_MARKER
    if not marker.exists():
        raise FileNotFoundError(f"no {BEST_MARKER} marker in {run_dir}")
    name = marker.read_text(encoding="utf-8").splitlines()[0].strip()
    return Checkpoint.load(run_dir / name)


__all__ = [
    "BEST_MARKER",
    "Checkpoint",
    "CheckpointSelector",
    "METRIC_MODES",
    "best_index",
    "load_best",
    "write_best_marker",
]
