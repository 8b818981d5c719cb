"""Parameterised layers built on the autodiff ops.

A ``Module`` owns named parameter tensors, running batchnorm statistics and child
modules, all registered by attribute assignment in construction order. Names are
dot-joined paths (``block1.conv2.weight``), which is also the key format of state
dicts and weight files.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.ops import RunningStats
from src.autodiff.tensor import Tensor
from src.utils.errors import ArchitectureMismatchError, ValidationError

logger = logging.getLogger(__name__)


def he_uniform(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform init in ``[-sqrt(6 / fan_in), sqrt(6 / fan_in)]``."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container of parameters, batchnorm statistics and sub-modules."""

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Tensor) and value.requires_grad:
            value.name = name
            self._parameters[name] = value
        elif isinstance(value, RunningStats):
            self._buffers[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    # ── traversal ──

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, RunningStats]]:
        for name, stats in self._buffers.items():
            yield prefix + name, stats
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def train(self) -> "Module":
        object.__setattr__(self, "training", True)
        for child in self._children.values():
            child.train()
        return self

    def eval(self) -> "Module":
        object.__setattr__(self, "training", False)
        for child in self._children.values():
            child.eval()
        return self

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"

    # ── state ──

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter plus running statistics, in registration order."""
        state: Dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, stats in self.named_buffers():
            state[f"{name}.running_mean"] = stats.mean.copy()
            state[f"{name}.running_var"] = stats.var.copy()
            state[f"{name}.updates"] = np.array([float(stats.updates)])
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays from ``state`` into this module's parameters and statistics.

        Raises:
            ArchitectureMismatchError: first missing or differently shaped entry.
        """
        expected = self.state_dict()
        for name, current in expected.items():
            if name not in state:
                if strict:
                    raise ArchitectureMismatchError(name, "missing from source weights")
                continue
            if tuple(np.shape(state[name])) != current.shape:
                raise ArchitectureMismatchError(
                    name, f"shape {tuple(np.shape(state[name]))} does not match {current.shape}"
                )
        if strict:
            extra = [name for name in state if name not in expected]
            if extra:
                raise ArchitectureMismatchError(extra[0], "not present in target model")

        for name, p in self.named_parameters():
            if name in state:
                p.data = np.array(state[name], dtype=p.data.dtype, copy=True)
        for name, stats in self.named_buffers():
            if f"{name}.running_mean" in state:
                stats.mean = np.array(state[f"{name}.running_mean"], dtype=stats.mean.dtype, copy=True)
                stats.var = np.array(state[f"{name}.running_var"], dtype=stats.var.dtype, copy=True)
                stats.updates = int(np.asarray(state[f"{name}.updates"]).reshape(-1)[0])

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    """3x3 same-padded convolution."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        fan_in = 9 * in_channels
        self.weight = Tensor(he_uniform((3, 3, in_channels, out_channels), fan_in, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, dtype=np.float64):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.stats = RunningStats.empty(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.stats, mode=self.mode)


class ConvBNReLU(Module):
    """One encoder layer: convolution, batch normalisation, ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, rng, dtype)
        self.bn = BatchNorm(out_channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.weight = Tensor(he_uniform((n_in, n_out), n_in, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class Dropout(Module):
    """Inverted dropout driven by its own seeded generator."""

    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.rate, self.rng, training=self.training)


__all__ = ["BatchNorm", "Conv2d", "ConvBNReLU", "Dense", "Dropout", "Module", "he_uniform"]
