"""Wall-time and memory monitoring for long-running steps.

``monitor_performance`` wraps cohort generation, pretraining, fine-tuning and grid
search. Each call is timed; calls above ``slow_threshold`` seconds are logged as
WARNING, and with ``log_memory`` the resident-memory delta (psutil) is logged when it
exceeds 10 MB. ``PerformanceTracker.get_performance_summary()`` tabulates everything
seen in this process.
"""
from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import pandas as pd
import psutil

logger = logging.getLogger(__name__)

MEMORY_LOG_THRESHOLD_MB = 10.0


@dataclass
class _CallStats:
    call_count: int = 0
    total_time: float = 0.0
    max_time: float = 0.0
    error_count: int = 0
    last_memory_delta_mb: Optional[float] = None

    @property
    def avg_time(self) -> float:
        return self.total_time / self.call_count if self.call_count else 0.0


_performance_metrics: Dict[str, _CallStats] = {}


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / 1024 / 1024


def monitor_performance(slow_threshold: float = 1.0, log_memory: bool = False):
    """Decorator recording duration (and optionally memory change) of each call.

    Args:
        slow_threshold: Seconds above which a call is logged as slow.
        log_memory: Also record the resident-memory delta of the call.
    """

    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            name = f"{func.__module__}.{func.__name__}"
            start = time.perf_counter()
            start_memory = _rss_mb() if log_memory else None
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                _record(name, time.perf_counter() - start, start_memory, slow_threshold, error=e)
                raise
            _record(name, time.perf_counter() - start, start_memory, slow_threshold)
            return result

        return wrapper

    return decorator


def _record(
    name: str,
    elapsed: float,
    start_memory: Optional[float],
    slow_threshold: float,
    error: Optional[BaseException] = None,
) -> None:
    stats = _performance_metrics.setdefault(name, _CallStats())
    stats.call_count += 1
    stats.total_time += elapsed
    stats.max_time = max(stats.max_time, elapsed)

    if error is not None:
        stats.error_count += 1
        logger.error("%s failed after %.3fs: %s", name, elapsed, error)
    elif elapsed > slow_threshold:
        logger.warning("SLOW: %s took %.3fs (threshold: %ss)", name, elapsed, slow_threshold)
    else:
        logger.debug("%s completed in %.3fs", name, elapsed)

    if start_memory is not None:
        now = _rss_mb()
        stats.last_memory_delta_mb = now - start_memory
        if abs(stats.last_memory_delta_mb) > MEMORY_LOG_THRESHOLD_MB:
            logger.info("%s memory change: %+.1fMB (now: %.1fMB)", name, stats.last_memory_delta_mb, now)


class PerformanceTracker:
    """Read access to the metrics collected by ``monitor_performance``."""

    @staticmethod
    def get_performance_summary() -> pd.DataFrame:
        """One row per monitored function, slowest average first.

        Columns: function_name, call_count, avg_time, max_time, error_rate (%),
        memory_delta_mb (last call, when memory was monitored).
        """
        if not _performance_metrics:
            return pd.DataFrame()
        rows = [
            {
                "function_name": name,
                "call_count": s.call_count,
                "avg_time": round(s.avg_time, 3),
                "max_time": round(s.max_time, 3),
                "error_rate": round(100.0 * s.error_count / s.call_count, 1),
                "memory_delta_mb": None if s.last_memory_delta_mb is None else round(s.last_memory_delta_mb, 1),
            }
            for name, s in _performance_metrics.items()
        ]
        return pd.DataFrame(rows).sort_values("avg_time", ascending=False).reset_index(drop=True)

    @staticmethod
    def get_slow_functions(threshold: float = 1.0) -> pd.DataFrame:
        summary = PerformanceTracker.get_performance_summary()
        if summary.empty:
            return summary
        return summary[summary["avg_time"] > threshold]

    @staticmethod
    def reset_metrics() -> None:
        _performance_metrics.clear()
        logger.debug("Performance metrics reset")


__all__ = ["PerformanceTracker", "monitor_performance"]
