"""Adam optimizer with bias-corrected moment estimates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping, Optional

import numpy as np

from src.autodiff.tensor import Tensor
from src.utils.errors import NonFiniteError, ShapeError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moments plus the shared step counter and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("Adam betas must be in [0, 1)")


def adam_step(
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> AdamState:
    """Apply one Adam update to ``params`` in place and advance ``state.t``.

    Parameters without a gradient are left untouched, moments included. A zero gradient
    still decays the moments and applies the accumulated momentum; from a fresh state it
    moves nothing. Any non-finite gradient aborts the step before anything changes.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter '{name}' {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'", step=state.t + 1)

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    step_size = state.lr / bc1

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.epsilon)
    return state


class Adam:
    """Optimizer bound to a fixed set of named parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params: Dict[str, Tensor] = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        arrays = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(arrays, grads, self.state)
        logger.debug("adam step %d over %d parameters", self.state.t, len(arrays))


__all__ = ["AdamState", "Adam", "adam_step"]
