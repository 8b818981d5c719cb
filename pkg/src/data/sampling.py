"""Pair sampling for the interval-regression pretext task.

Ordered pairs ``(a, b)`` of distinct visits of one eye are bucketed by their signed
interval ``t_b - t_a`` into bins of ``bin_width`` months. A draw picks a non-empty bin
uniformly, then a pair uniformly inside it, which flattens the interval distribution
and keeps it symmetric about zero. Both scans of a pair use the same B-scan index.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.data.cohort import Cohort, EyeSeries, ScanPair
from src.utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

INTERVAL_BIN_MONTHS = 3.0


def interval_bin(delta_t: float, bin_width: float = INTERVAL_BIN_MONTHS) -> int:
    """Signed bin index of an interval (nearest multiple of ``bin_width``, halves away from zero)."""
    q = abs(delta_t) / bin_width
    return int(math.copysign(math.floor(q + 0.5), delta_t))


def ordered_pairs(series: EyeSeries) -> List[Tuple[int, int]]:
    """Index pairs ``(a, b)`` of visits with a non-zero interval, in a fixed order."""
    n = len(series.scans)
    return [(a, b) for a in range(n) for b in range(n) if a != b]


def pair_bins(series: EyeSeries, bin_width: float = INTERVAL_BIN_MONTHS) -> Dict[int, List[Tuple[int, int]]]:
    bins: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
    for a, b in ordered_pairs(series):
        bins[interval_bin(series.scans[b].t - series.scans[a].t, bin_width)].append((a, b))
    return dict(sorted(bins.items()))


def sample_pair(
    series: EyeSeries,
    bscan_index: int,
    rng: np.random.Generator,
    bin_width: float = INTERVAL_BIN_MONTHS,
) -> ScanPair:
    """Draw one bin-uniform ordered pair of visits of ``series`` at ``bscan_index``.

    Raises:
        InsufficientDataError: the eye has fewer than two visits.
    """
    if len(series.scans) < 2:
        raise InsufficientDataError(f"eye {series.eye_id} needs at least 2 scans to form a pair")
    if not 0 <= bscan_index < series.n_bscans:
        raise ValidationError(f"B-scan index {bscan_index} out of range for eye {series.eye_id}")
    bins = pair_bins(series, bin_width)
    keys = list(bins)
    members = bins[keys[int(rng.integers(len(keys)))]]
    a, b = members[int(rng.integers(len(members)))]
    scan_a, scan_b = series.scans[a], series.scans[b]
    return ScanPair(
        bscan_a=scan_a.bscan(bscan_index),
        bscan_b=scan_b.bscan(bscan_index),
        t_a=scan_a.t,
        t_b=scan_b.t,
        eye_id=series.eye_id,
        bscan_index=bscan_index,
    )


@dataclass(slots=True)
class PairBatch:
    """Stacked pairs ready for the siamese model: ``a``/``b`` are (N, H, W, 1)."""

    a: np.ndarray
    b: np.ndarray
    delta_t: np.ndarray

    def __len__(self) -> int:
        return int(self.delta_t.shape[0])


def stack_pairs(pairs: Sequence[ScanPair], dtype=np.float64) -> PairBatch:
    if not pairs:
        raise InsufficientDataError("cannot stack an empty list of pairs")
    a = np.stack([p.bscan_a for p in pairs]).astype(dtype)[..., None]
    b = np.stack([p.bscan_b for p in pairs]).astype(dtype)[..., None]
    return PairBatch(a, b, np.array([p.delta_t for p in pairs], dtype=dtype))


def pairable_eyes(cohort: Cohort) -> List[EyeSeries]:
    return [eye for eye in cohort.eyes() if len(eye.scans) >= 2]


class PairSampler:
    """Draws pretext batches: eye uniformly, B-scan index uniformly, then ``sample_pair``."""

    def __init__(self, cohort: Cohort, seed: int, bin_width: float = INTERVAL_BIN_MONTHS):
        self.eyes = pairable_eyes(cohort)
        if not self.eyes:
            raise InsufficientDataError("no eye has two or more scans; cannot sample pairs")
        self.rng = np.random.default_rng(seed)
        self.bin_width = bin_width

    def draw(self) -> ScanPair:
        eye = self.eyes[int(self.rng.integers(len(self.eyes)))]
        index = int(self.rng.integers(eye.n_bscans))
        return sample_pair(eye, index, self.rng, self.bin_width)

    def batch(self, size: int, dtype=np.float64) -> PairBatch:
        return stack_pairs([self.draw() for _ in range(size)], dtype)


def validation_pairs(cohort: Cohort, max_pairs: int, seed: int) -> List[ScanPair]:
    """A fixed set of at most ``max_pairs`` pairs drawn once for validation."""
    sampler = PairSampler(cohort, seed)
    return [sampler.draw() for _ in range(max_pairs)]


def enumerate_pairs(series: EyeSeries, bscan_index: int) -> List[ScanPair]:
    """Every ordered non-zero-interval pair of ``series`` at one B-scan index."""
    return [
        ScanPair(series.scans[a].bscan(bscan_index), series.scans[b].bscan(bscan_index),
                 series.scans[a].t, series.scans[b].t, series.eye_id, bscan_index)
        for a, b in ordered_pairs(series)
    ]


__all__ = [
    "INTERVAL_BIN_MONTHS",
    "PairBatch",
    "PairSampler",
    "enumerate_pairs",
    "interval_bin",
    "ordered_pairs",
    "pair_bins",
    "pairable_eyes",
    "sample_pair",
    "stack_pairs",
    "validation_pairs",
]
