"""Dense tensors and the operation tape used for reverse-mode differentiation.

DESIGN NOTE: Recording Model
============================

Operations only record themselves while a ``Tape`` is active (``with Tape() as tape``)
and at least one input requires a gradient. Inference therefore runs without any
bookkeeping. The tape stores nodes in execution order, which is a valid topological
order, and ``Tape.backward`` walks it in reverse.

Tapes are stacked per thread, so worker threads never share recording state.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import NonFiniteError, ShapeError

_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A row-major block of reals with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        if any(d <= 0 for d in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {array.shape}")
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


@dataclass(slots=True)
class TapeNode:
    """One recorded operation."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of executed operations."""

    nodes: List[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(x) to every leaf tensor reachable from ``loss``.

        Leaf gradients accumulate into ``Tensor.grad`` so several losses may share
        one optimizer step.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}
        if loss.is_leaf:
            leaves[id(loss)] = loss

        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, g in zip(node.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if g.shape != tensor.shape:
                    raise ShapeError(
                        f"backward of '{node.op}' produced gradient {g.shape} for input {tensor.shape}"
                    )
                key = id(tensor)
                grads[key] = grads[key] + g if key in grads else g
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {tensor!r}")
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

    def __len__(self) -> int:
        return len(self.nodes)


def _stack() -> List[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def make_output(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: BackwardFn,
) -> Tensor:
    """Wrap an op result, check it is finite, and record it on the active tape."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.is_leaf = not out.requires_grad
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, backward)
    return out


__all__ = ["Tensor", "Tape", "TapeNode", "active_tape", "make_output"]
