"""Finite-difference verification of tape gradients.

The error of one coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``
with a central difference as the numeric value. For whole networks, pass
``skip_nonsmooth=True``: a coordinate whose forward and backward one-sided differences
disagree is treated as crossing a ReLU kink or a max-pool switch and is skipped. The
central-difference error caused by a crossed kink is exactly half that disagreement
(in gradient units), so unskipped coordinates are bounded by ``kink_tol``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

ParamSpec = Union[Mapping[str, Tensor], Sequence[Tensor]]


@dataclass(slots=True)
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst_parameter: Optional[str] = None
    worst_index: Optional[Tuple[int, ...]] = None


def _named(params: ParamSpec) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param{i}"): p for i, p in enumerate(params)}


def gradcheck_report(
    f: Callable[[], Tensor],
    params: ParamSpec,
    h: float = 1e-6,
    floor: float = 1e-12,
    max_entries: Optional[int] = None,
    seed: int = 0,
    skip_nonsmooth: bool = False,
    kink_tol: float = 1e-6,
) -> GradcheckReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    Args:
        f: Zero-argument closure rebuilding the graph from the current parameter data.
        params: Tensors to check (mapping name -> tensor, or a sequence).
        h: Finite-difference step.
        floor: Lower bound of the relative-error denominator.
        max_entries: Check at most this many coordinates per parameter (seeded sample).
        seed: Seed of the coordinate sample.
        skip_nonsmooth: Skip coordinates where one-sided differences disagree.
        kink_tol: Allowed one-sided disagreement, relative to the gradient scale.

    Returns:
        GradcheckReport with the worst relative error and coordinate counts.
    """
    named = _named(params)
    for p in named.values():
        p.data = np.ascontiguousarray(p.data)
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named.items()}

    rng = np.random.default_rng(seed)
    f0 = f().item()
    worst = 0.0
    worst_at: Tuple[Optional[str], Optional[Tuple[int, ...]]] = (None, None)
    checked = skipped = 0

    for name, p in named.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for flat_idx in indices:
            original = flat[flat_idx]
            flat[flat_idx] = original + h
            f_plus = f().item()
            flat[flat_idx] = original - h
            f_minus = f().item()
            flat[flat_idx] = original

            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[flat_idx]
            scale = max(abs(a), abs(numeric), floor)
            if skip_nonsmooth:
                disagreement = abs((f_plus - f0) - (f0 - f_minus)) / (2.0 * h)
                if disagreement > kink_tol * scale:
                    skipped += 1
                    continue
            err = abs(a - numeric) / scale
            checked += 1
            if err > worst:
                worst = err
                worst_at = (name, tuple(int(i) for i in np.unravel_index(flat_idx, p.shape)))

    if skipped:
        logger.warning("gradcheck skipped %d non-smooth coordinates (%d checked)", skipped, checked)
    return GradcheckReport(worst, checked, skipped, *worst_at)


def gradcheck(f: Callable[[], Tensor], params: ParamSpec, **kwargs) -> float:
    """Maximum relative error between tape and central-difference gradients."""
    return gradcheck_report(f, params, **kwargs).max_rel_error


__all__ = ["GradcheckReport", "gradcheck", "gradcheck_report"]
