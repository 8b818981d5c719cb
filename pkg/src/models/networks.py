"""Networks built around the shared encoder, and the inference helpers used by training
and evaluation.

- ``SiameseModel``: one encoder F applied to both scans of a pair, pair head G on the
  concatenated embeddings regressing the signed interval in months.
- ``ClassifierModel``: encoder plus a hidden ReLU layer (dropout after it) and a
  2-way softmax.
- ``AutoencoderModel``: encoder plus a decoder mirroring it with nearest-neighbour
  upsampling in place of pooling.

Every model reports an architecture descriptor that is stored in its checkpoints, and
``build_model`` reconstructs a model from one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.models.encoder import Encoder, EncoderConfig
from src.models.layers import BatchNorm, Conv2d, Dense, Dropout, Module
from src.utils.errors import ArchitectureMismatchError, ConfigError, ShapeError

logger = logging.getLogger(__name__)

PAIR_HEAD_HIDDEN = 64


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


class PairHead(Module):
    """G: concat(h1, h2) -> hidden ReLU layer -> scalar interval."""

    def __init__(self, embedding_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.fc1 = Dense(2 * embedding_dim, hidden, rng, dtype)
        self.fc2 = Dense(hidden, 1, rng, dtype)

    def forward(self, pair: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(pair)))


class SiameseModel(Module):
    kind = "siamese"

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float64, head_hidden: int = PAIR_HEAD_HIDDEN):
        super().__init__()
        self.encoder_config = config
        self.encoder = Encoder(config, _rng(seed, 0), dtype)
        self.head = PairHead(config.embedding_dim, head_hidden, _rng(seed, 1), dtype)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        """Predicted ``t_b - t_a`` for batches ``a`` and ``b``, shape (N,).

        Both batches pass through the encoder as one stacked batch, so the two
        branches use the same parameter tensors and the same batch statistics.
        """
        if a.shape != b.shape:
            raise ShapeError(f"pair batches differ in shape: {a.shape} vs {b.shape}")
        n = a.shape[0]
        h = self.encoder(ops.concat([a, b], axis=0))
        joined = ops.concat([ops.slice_batch(h, 0, n), ops.slice_batch(h, n, 2 * n)], axis=-1)
        return ops.reshape(self.head(joined), (n,))

    def architecture(self) -> Dict[str, Any]:
        return {
            "model": self.kind,
            "encoder": self.encoder_config.descriptor(),
            "head_widths": [2 * self.encoder_config.embedding_dim, self.head.fc1.weight.shape[1], 1],
        }


class ClassifierModel(Module):
    kind = "classifier"

    def __init__(self, config: EncoderConfig, hidden: int = 128, dropout: float = 0.0, seed: int = 0,
                 dtype=np.float64):
        super().__init__()
        self.encoder_config = config
        self.encoder = Encoder(config, _rng(seed, 0), dtype)
        self.hidden = Dense(config.embedding_dim, hidden, _rng(seed, 2), dtype)
        self.dropout = Dropout(dropout, _rng(seed, 3))
        self.out = Dense(hidden, 2, _rng(seed, 4), dtype)

    def forward(self, x: Tensor) -> Tensor:
        """Class probabilities, shape (N, 2)."""
        h = self.encoder(x)
        return ops.softmax(self.out(self.dropout(ops.relu(self.hidden(h)))))

    def head_parameters(self) -> Dict[str, Tensor]:
        return {name: p for name, p in self.named_parameters() if not name.startswith("encoder.")}

    def architecture(self) -> Dict[str, Any]:
        return {
            "model": self.kind,
            "encoder": self.encoder_config.descriptor(),
            "head_widths": [self.encoder_config.embedding_dim, self.hidden.weight.shape[1], 2],
            "dropout": self.dropout.rate,
        }


class Decoder(Module):
    """Embedding -> image: dense to the bottleneck grid, then three upsample-conv stages."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.grid = (*config.bottleneck_size, config.block_channels[-1])
        self.fc = Dense(config.embedding_dim, int(np.prod(self.grid)), rng, dtype)
        widths = list(reversed(config.block_channels)) + [config.in_channels]
        self.conv1 = Conv2d(widths[0], widths[1], rng, dtype)
        self.bn1 = BatchNorm(widths[1], dtype)
        self.conv2 = Conv2d(widths[1], widths[2], rng, dtype)
        self.bn2 = BatchNorm(widths[2], dtype)
        self.conv3 = Conv2d(widths[2], widths[3], rng, dtype)

    def forward(self, h: Tensor) -> Tensor:
        n = h.shape[0]
        x = ops.reshape(ops.relu(self.fc(h)), (n, *self.grid))
        x = ops.relu(self.bn1(self.conv1(ops.upsample2(x))))
        x = ops.relu(self.bn2(self.conv2(ops.upsample2(x))))
        return self.conv3(ops.upsample2(x))


class AutoencoderModel(Module):
    kind = "autoencoder"

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.encoder_config = config
        self.encoder = Encoder(config, _rng(seed, 0), dtype)
        self.decoder = Decoder(config, _rng(seed, 5), dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim == 3:
            x = ops.reshape(x, (1, *x.shape))
        return self.decoder(self.encoder(x))

    def architecture(self) -> Dict[str, Any]:
        widths = list(reversed(self.encoder_config.block_channels)) + [self.encoder_config.in_channels]
        return {"model": self.kind, "encoder": self.encoder_config.descriptor(), "decoder_widths": widths}


Network = Union[SiameseModel, ClassifierModel, AutoencoderModel]


def build_model(descriptor: Mapping[str, Any], seed: int = 0, dtype=np.float64) -> Network:
    """Instantiate an untrained model from an architecture descriptor."""
    config = EncoderConfig(**descriptor["encoder"])
    kind = descriptor.get("model")
    if kind == SiameseModel.kind:
        return SiameseModel(config, seed=seed, dtype=dtype, head_hidden=int(descriptor["head_widths"][1]))
    if kind == ClassifierModel.kind:
        return ClassifierModel(config, hidden=int(descriptor["head_widths"][1]),
                               dropout=float(descriptor.get("dropout", 0.0)), seed=seed, dtype=dtype)
    if kind == AutoencoderModel.kind:
        return AutoencoderModel(config, seed=seed, dtype=dtype)
    raise ConfigError(f"unknown model kind {kind!r}")


# ── inference helpers ──


@dataclass(slots=True)
class Embedding:
    """H_t of one B-scan together with where it came from."""

    vector: np.ndarray
    scan_id: Optional[str] = None
    bscan_index: Optional[int] = None
    t: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.vector.shape[0])


def _image_batch(images: np.ndarray, config: EncoderConfig, dtype) -> Tensor:
    x = np.asarray(images, dtype=dtype)
    h, w = config.input_size
    if x.shape == (h, w):
        x = x[None, :, :, None]
    elif x.ndim == 3 and x.shape[1:] == (h, w):
        x = x[..., None]
    elif x.ndim == 3 and x.shape == (h, w, config.in_channels):
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (h, w, config.in_channels):
        raise ShapeError(f"expected {h}x{w} B-scans, got array of shape {np.shape(images)}")
    return Tensor(x, dtype=dtype)


def _encoder_of(model: Union[Network, Encoder]) -> Encoder:
    return model if isinstance(model, Encoder) else model.encoder


def encode_batch(images: np.ndarray, model: Union[Network, Encoder], mode: str = "eval") -> np.ndarray:
    """Embeddings of a stack of B-scans, shape (N, embedding_dim)."""
    encoder = _encoder_of(model)
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = encoder.training
    if mode == "train":
        encoder.train()
    else:
        encoder.eval()
    try:
        x = _image_batch(images, encoder.config, encoder.embed.weight.dtype)
        return encoder(x).data.copy()
    finally:
        if was_training:
            encoder.train()
        else:
            encoder.eval()


def encode(bscan: np.ndarray, model: Union[Network, Encoder], mode: str = "eval", scan_id: Optional[str] = None,
           bscan_index: Optional[int] = None, t: Optional[float] = None) -> Embedding:
    """F(X_t) for a single preprocessed B-scan."""
    vector = encode_batch(bscan, model, mode=mode)
    if vector.shape[0] != 1:
        raise ShapeError(f"encode takes one B-scan, got {vector.shape[0]}")
    return Embedding(vector[0], scan_id=scan_id, bscan_index=bscan_index, t=t)


def predict_interval(h1: Union[Embedding, np.ndarray], h2: Union[Embedding, np.ndarray], model: SiameseModel) -> float:
    """G([h1, h2]) in months. Argument order matters: no antisymmetry is imposed."""
    v1 = h1.vector if isinstance(h1, Embedding) else np.asarray(h1)
    v2 = h2.vector if isinstance(h2, Embedding) else np.asarray(h2)
    dim = model.encoder_config.embedding_dim
    if v1.shape != (dim,) or v2.shape != (dim,):
        raise ShapeError(f"embeddings must have length {dim}, got {v1.shape} and {v2.shape}")
    dtype = model.head.fc1.weight.dtype
    pair = Tensor(np.concatenate([v1, v2])[None], dtype=dtype)
    return float(model.head(pair).data.reshape(-1)[0])


def predict_pairs(a: np.ndarray, b: np.ndarray, model: SiameseModel) -> np.ndarray:
    """Eval-mode interval predictions for stacks of B-scans ``a`` (earlier) and ``b``."""
    ha = encode_batch(a, model)
    hb = encode_batch(b, model)
    dtype = model.head.fc1.weight.dtype
    return model.head(Tensor(np.concatenate([ha, hb], axis=1), dtype=dtype)).data.reshape(-1).copy()


def classify_batch(images: np.ndarray, model: ClassifierModel) -> np.ndarray:
    """Eval-mode class-1 probabilities for a stack of B-scans."""
    was_training = model.training
    model.eval()
    try:
        x = _image_batch(images, model.encoder_config, model.out.weight.dtype)
        return model(x).data[:, 1].copy()
    finally:
        if was_training:
            model.train()


def classify(bscan: np.ndarray, model: ClassifierModel) -> float:
    """Probability of conversion for one B-scan."""
    return float(classify_batch(bscan, model)[0])


def reconstruct(bscan: np.ndarray, autoencoder: AutoencoderModel) -> np.ndarray:
    """Eval-mode reconstruction with the same shape as ``bscan``."""
    original_shape = np.shape(bscan)
    was_training = autoencoder.training
    autoencoder.eval()
    try:
        x = _image_batch(bscan, autoencoder.encoder_config, autoencoder.decoder.fc.weight.dtype)
        return autoencoder(x).data.reshape(original_shape).copy()
    finally:
        if was_training:
            autoencoder.train()


def encoder_state(source: Union[Network, Encoder, Mapping[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Encoder entries of a model or a full-model state dict, keys relative to the encoder."""
    if isinstance(source, Encoder):
        return source.state_dict()
    if isinstance(source, Module):
        return source.encoder.state_dict()
    prefix = "encoder."
    return {k[len(prefix):]: v for k, v in source.items() if k.startswith(prefix)}


def transfer_encoder(source: Union[Network, Encoder, Mapping[str, np.ndarray]],
                     target: ClassifierModel) -> ClassifierModel:
    """Copy encoder weights and statistics from ``source`` into ``target`` bit-exactly.

    The classification block of ``target`` keeps its own fresh initialisation and every
    parameter stays trainable.

    Raises:
        ArchitectureMismatchError: naming the first encoder parameter that is missing
            or has a different shape.
    """
    state = encoder_state(source)
    target_state = target.encoder.state_dict()
    for name, current in target_state.items():
        if name not in state:
            raise ArchitectureMismatchError(f"encoder.{name}", "missing from source encoder")
        if np.shape(state[name]) != current.shape:
            raise ArchitectureMismatchError(
                f"encoder.{name}", f"source shape {np.shape(state[name])} vs target shape {current.shape}"
            )
    extra = [name for name in state if name not in target_state]
    if extra:
        raise ArchitectureMismatchError(f"encoder.{extra[0]}", "not present in target encoder")

    target.encoder.load_state_dict(state)
    for _, p in target.named_parameters():
        p.requires_grad = True
    logger.info("transferred %d encoder arrays into classifier", len(state))
    return target


__all__ = [
    "AutoencoderModel",
    "ClassifierModel",
    "Decoder",
    "Embedding",
    "PairHead",
    "SiameseModel",
    "build_model",
    "classify",
    "classify_batch",
    "encode",
    "encode_batch",
    "encoder_state",
    "predict_interval",
    "predict_pairs",
    "reconstruct",
    "transfer_encoder",
]
