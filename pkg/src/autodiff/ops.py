"""Differentiable operators over NHWC image batches and (N, features) matrices.

Every op validates shapes, computes its forward value with numpy, and registers a
closure computing input gradients from the upstream gradient. Image ops accept a
single HxWxC image as well as an NxHxWxC batch.

Conventions:
- Convolutions are 3x3, stride 1, zero same-padding, cross-correlation.
- Max pooling routes the gradient to the first maximum in row-major window order.
- Batch normalisation normalises over every axis but the last (channels).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import Tensor, make_output
from src.utils.errors import BatchNormStateError, ShapeError, ValidationError

PROBABILITY_FLOOR = 1e-12
BATCHNORM_MOMENTUM = 0.9
BATCHNORM_EPS = 1e-5


def _as_batch(x: Tensor, op: str) -> Tuple[np.ndarray, bool]:
    data = x.data
    if data.ndim == 3:
        return data[None], True
    if data.ndim != 4:
        raise ShapeError(f"{op} expects HxWxC or NxHxWxC input, got shape {x.shape}")
    return data, False


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 same-padded convolution: ``out[n,h,w,k] = b[k] + sum x[n,h+i-1,w+j-1,c] * K[i,j,c,k]``."""
    xd, squeezed = _as_batch(x, "conv2d")
    if kernels.data.ndim != 4 or kernels.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d kernels must be 3x3xCxK, got {kernels.shape}")
    n, h, w, c = xd.shape
    _, _, kc, k = kernels.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c} channels, kernels expect {kc}")
    if bias.shape != (k,):
        raise ShapeError(f"conv2d bias must have shape ({k},), got {bias.shape}")

    wd = kernels.data
    xp = np.pad(xd, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty((n, h, w, k), dtype=np.result_type(xd, wd))
    out[...] = bias.data
    for i in range(3):
        for j in range(3):
            out += xp[:, i : i + h, j : j + w, :] @ wd[i, j]

    def backward(g: np.ndarray):
        g4 = g[None] if squeezed else g
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(3):
            for j in range(3):
                window = xp[:, i : i + h, j : j + w, :]
                gw[i, j] = np.tensordot(window, g4, axes=([0, 1, 2], [0, 1, 2]))
                gxp[:, i : i + h, j : j + w, :] += g4 @ wd[i, j].T
        gx = gxp[:, 1:-1, 1:-1, :]
        if squeezed:
            gx = gx[0]
        return np.ascontiguousarray(gx), gw, g4.sum(axis=(0, 1, 2))

    return make_output("conv2d", out[0] if squeezed else out, (x, kernels, bias), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2."""
    xd, squeezed = _as_batch(x, "maxpool2")
    n, h, w, c = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dimensions, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = xd.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    argmax = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, argmax, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        g4 = g[None] if squeezed else g
        routed = np.zeros((n, h2, w2, c, 4), dtype=g4.dtype)
        np.put_along_axis(routed, argmax, g4[..., None], axis=-1)
        gx = routed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx[0] if squeezed else gx,)

    return make_output("maxpool2", out[0] if squeezed else out, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling."""
    xd, squeezed = _as_batch(x, "upsample2")
    n, h, w, c = xd.shape
    out = np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2)

    def backward(g: np.ndarray):
        g4 = g[None] if squeezed else g
        gx = g4.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        return (gx[0] if squeezed else gx,)

    return make_output("upsample2", out[0] if squeezed else out, (x,), backward)


@dataclass
class RunningStats:
    """Running per-channel statistics of one batch-normalisation layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BATCHNORM_MOMENTUM
    updates: int = 0

    @classmethod
    def empty(cls, channels: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    mode: str = "train",
    eps: float = BATCHNORM_EPS,
) -> Tensor:
    """Per-channel batch normalisation followed by the affine ``gamma * xhat + beta``.

    Train mode normalises with batch statistics and updates ``stats``; eval mode uses
    the running statistics and raises ``BatchNormStateError`` if none were collected.
    """
    xd = x.data
    c = xd.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters must have shape ({c},), got {gamma.shape} and {beta.shape}")
    axes = tuple(range(xd.ndim - 1))

    if mode == "train":
        count = xd.size // c
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        stats.mean = stats.momentum * stats.mean + (1.0 - stats.momentum) * mean
        stats.var = stats.momentum * stats.var + (1.0 - stats.momentum) * var
        stats.updates += 1
    elif mode == "eval":
        if stats.updates == 0:
            raise BatchNormStateError("batchnorm in eval mode before any train-mode statistics")
        count = None
        mean, var = stats.mean, stats.var
    else:
        raise ValidationError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g: np.ndarray):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data
        if count is None:
            gx = gxhat * inv_std
        else:
            gx = (inv_std / count) * (
                count * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes)
            )
        return gx, ggamma, gbeta

    return make_output("batchnorm", out, (x, gamma, beta), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ W + b`` for a vector (N,) or a batch (B, N)."""
    if weights.data.ndim != 2:
        raise ShapeError(f"dense weights must be NxM, got {weights.shape}")
    n_in, n_out = weights.shape
    if x.shape[-1] != n_in or x.data.ndim not in (1, 2):
        raise ShapeError(f"dense input {x.shape} does not match weights {weights.shape}")
    if bias.shape != (n_out,):
        raise ShapeError(f"dense bias must have shape ({n_out},), got {bias.shape}")
    out = x.data @ weights.data + bias.data

    def backward(g: np.ndarray):
        if x.data.ndim == 1:
            return g @ weights.data.T, np.outer(x.data, g), g
        return g @ weights.data.T, x.data.T @ g, g.sum(axis=0)

    return make_output("dense", out, (x, weights, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray):
        return (g * mask,)

    return make_output("relu", x.data * mask, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_output("softmax", s, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient back exactly."""
    if len(tensors) < 2:
        raise ShapeError("concat needs at least two tensors")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=ax))

    return make_output("concat", out, tuple(tensors), backward)


def slice_batch(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along the batch axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice {start}:{stop} out of range for batch of {x.shape[0]}")
    out = x.data[start:stop].copy()

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return make_output("slice_batch", out, (x,), backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    original = x.shape

    def backward(g: np.ndarray):
        return (g.reshape(original),)

    return make_output("reshape", out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray):
        return (g * mask,)

    return make_output("dropout", x.data * mask, (x,), backward)


def weighted_sum(x: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Scalar ``sum(x * weights)`` (plain sum when ``weights`` is None)."""
    w = np.ones_like(x.data) if weights is None else np.asarray(weights, dtype=x.data.dtype)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum weights {w.shape} do not match input {x.shape}")
    value = np.array([np.sum(x.data * w)])

    def backward(g: np.ndarray):
        return (g[0] * w,)

    return make_output("weighted_sum", value, (x,), backward)


def l2_loss(pred: Tensor, target) -> Tensor:
    """Squared-error regression loss averaged over samples.

    ``pred`` is (N,) or (N, 1); the per-sample term is ``(pred - target)^2``.
    """
    t = np.asarray(target, dtype=pred.data.dtype).reshape(pred.shape)
    diff = pred.data - t
    n = pred.shape[0]
    per_sample = (diff.reshape(n, -1) ** 2).sum(axis=1)
    value = np.array([per_sample.mean()])

    def backward(g: np.ndarray):
        return (g[0] * 2.0 * diff / n,)

    return make_output("l2_loss", value, (pred,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over every element (pixels)."""
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"mse target {t.shape} does not match prediction {pred.shape}")
    diff = pred.data - t
    value = np.array([np.mean(diff * diff)])

    def backward(g: np.ndarray):
        return (g[0] * 2.0 * diff / diff.size,)

    return make_output("mse", value, (pred,), backward)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` is (N, classes) or (classes,); rows must sum to 1 within 1e-6.
    Probabilities are floored at ``PROBABILITY_FLOOR`` before the log.
    """
    p = probs.data if probs.data.ndim == 2 else probs.data[None]
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    if y.shape[0] != p.shape[0]:
        raise ShapeError(f"cross_entropy got {y.shape[0]} labels for {p.shape[0]} rows")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("cross_entropy expects probability rows summing to 1")
    if np.any((y < 0) | (y >= p.shape[1])):
        raise ValidationError(f"labels must be in [0, {p.shape[1]})")
    rows = np.arange(p.shape[0])
    picked = p[rows, y]
    clamped = np.maximum(picked, PROBABILITY_FLOOR)
    value = np.array([-np.mean(np.log(clamped))])

    def backward(g: np.ndarray):
        gp = np.zeros_like(p)
        live = picked >= PROBABILITY_FLOOR
        gp[rows[live], y[live]] = -g[0] / (p.shape[0] * picked[live])
        return (gp if probs.data.ndim == 2 else gp[0],)

    return make_output("cross_entropy", value, (probs,), backward)


__all__ = [
    "PROBABILITY_FLOOR",
    "RunningStats",
    "batchnorm",
    "concat",
    "conv2d",
    "cross_entropy",
    "dense",
    "dropout",
    "flatten",
    "l2_loss",
    "maxpool2",
    "mse",
    "relu",
    "reshape",
    "slice_batch",
    "softmax",
    "upsample2",
    "weighted_sum",
]
