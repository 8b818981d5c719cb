import logging

import pytest

from src.utils.errors import ValidationError
from src.utils.performance import PerformanceTracker, monitor_performance


@pytest.fixture(autouse=True)
def clean_metrics():
    PerformanceTracker.reset_metrics()
    yield
    PerformanceTracker.reset_metrics()


@monitor_performance(slow_threshold=60.0, log_memory=True)
def _square(x):
    return x * x


@monitor_performance(slow_threshold=-1.0)
def _always_slow():
    return None


@monitor_performance()
def _fails():
    raise ValidationError("bad input")


def test_calls_are_counted():
    assert _square(3) == 9
    _square(4)
    summary = PerformanceTracker.get_performance_summary()
    row = summary[summary["function_name"].str.endswith("_square")].iloc[0]
    assert row["call_count"] == 2
    assert row["error_rate"] == 0.0
    assert row["memory_delta_mb"] is not None


def test_errors_are_recorded_and_reraised():
    with pytest.raises(ValidationError):
        _fails()
    row = PerformanceTracker.get_performance_summary().iloc[0]
    assert row["error_rate"] == 100.0


def test_slow_call_logs_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="src.utils.performance"):
        _always_slow()
    assert "SLOW" in caplog.text


def test_empty_summary():
    assert PerformanceTracker.get_performance_summary().empty
    assert PerformanceTracker.get_slow_functions().empty
