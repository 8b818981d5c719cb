"""Encoder F: B-scan -> embedding.

DESIGN NOTE: Block Wiring
=========================

Both variants use three blocks of ``layers_per_block`` conv-batchnorm-ReLU layers,
each block ending in one 2x max pool, followed by flatten and a linear dense layer
producing the embedding.

vgg:    in -> block1 -> block2 -> block3 -> dense

dense:  the input of every later block (and of the embedding layer) is the
        concatenation of the previous block's output with a max-pooled copy of that
        previous block's input. With the default channels the block inputs carry
        1, 17 and 49 channels and the embedding layer sees 64 + 49 = 113 channels
        at H/8 x W/8.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.models.layers import ConvBNReLU, Dense, Module
from src.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

VARIANTS = ("vgg", "dense")


@dataclass
class EncoderConfig:
    variant: str = "vgg"
    block_channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    layers_per_block: int = 3
    embedding_dim: int = 128
    input_size: Tuple[int, int] = (128, 128)
    in_channels: int = 1

    def __post_init__(self) -> None:
        self.block_channels = [int(c) for c in self.block_channels]
        self.input_size = tuple(int(s) for s in self.input_size)
        if self.variant not in VARIANTS:
            raise ConfigError(f"encoder variant must be one of {VARIANTS}, got {self.variant!r}")
        if len(self.block_channels) != 3 or any(c <= 0 for c in self.block_channels):
            raise ConfigError(f"block_channels must be three positive widths, got {self.block_channels}")
        if self.layers_per_block < 1 or self.embedding_dim < 1:
            raise ConfigError("layers_per_block and embedding_dim must be positive")
        h, w = self.input_size
        if h < 16 or w < 16 or h % 8 or w % 8:
            raise ConfigError(f"input_size must be multiples of 8 and at least 16x16, got {self.input_size}")

    @property
    def bottleneck_size(self) -> Tuple[int, int]:
        return self.input_size[0] // 8, self.input_size[1] // 8

    def block_input_channels(self) -> List[int]:
        """Channels entering each block, followed by the channels entering the embedding layer."""
        channels = [self.in_channels]
        for i, out in enumerate(self.block_channels):
            channels.append(out + channels[i] if self.variant == "dense" else out)
        return channels

    def descriptor(self) -> Dict[str, Any]:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


def encoder_parameter_count(config: EncoderConfig) -> int:
    """Trainable parameters of an encoder built from ``config``."""
    total = 0
    inputs = config.block_input_channels()
    for b, out in enumerate(config.block_channels):
        c_in = inputs[b]
        for _ in range(config.layers_per_block):
            total += 9 * c_in * out + out + 2 * out
            c_in = out
    h8, w8 = config.bottleneck_size
    total += h8 * w8 * inputs[-1] * config.embedding_dim + config.embedding_dim
    return total


class EncoderBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, n_layers: int, rng: np.random.Generator, dtype):
        super().__init__()
        self.n_layers = n_layers
        c = in_channels
        for i in range(n_layers):
            setattr(self, f"conv{i + 1}", ConvBNReLU(c, out_channels, rng, dtype))
            c = out_channels

    def forward(self, x: Tensor) -> Tensor:
        for i in range(self.n_layers):
            x = getattr(self, f"conv{i + 1}")(x)
        return ops.maxpool2(x)


class Encoder(Module):
    """Three conv blocks plus the embedding layer."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.config = config
        inputs = config.block_input_channels()
        for b, out in enumerate(config.block_channels):
            setattr(self, f"block{b + 1}", EncoderBlock(inputs[b], out, config.layers_per_block, rng, dtype))
        h8, w8 = config.bottleneck_size
        self.embed = Dense(h8 * w8 * inputs[-1], config.embedding_dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        """Embed an NxHxWxC batch (or a single HxWxC image) into (N, embedding_dim)."""
        expected = (*self.config.input_size, self.config.in_channels)
        if x.shape[-3:] != expected or x.data.ndim not in (3, 4):
            raise ShapeError(f"encoder expects images of shape {expected}, got {x.shape}")
        if x.data.ndim == 3:
            x = ops.reshape(x, (1, *x.shape))

        blocks = [self.block1, self.block2, self.block3]
        h = x
        for block in blocks:
            out = block(h)
            h = ops.concat([out, ops.maxpool2(h)]) if self.config.variant == "dense" else out
        return self.embed(ops.flatten(h))


__all__ = ["Encoder", "EncoderBlock", "EncoderConfig", "VARIANTS", "encoder_parameter_count"]
