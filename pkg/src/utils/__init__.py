"""Utilities package: error hierarchy, performance monitoring, config validation.

``src.utils.config`` is imported directly (it depends on the data, model and training
packages, which themselves import from here).
"""
# flake8: noqa: F401

from .errors import (
    ConfigError,
    NonFiniteError,
    ProgressionError,
    RuntimeFailure,
    ShapeError,
    ValidationError,
)
from .performance import PerformanceTracker, monitor_performance
from .validation import validate_choice, validate_positive, validate_section_keys

__all__ = [
    "ConfigError",
    "NonFiniteError",
    "PerformanceTracker",
    "ProgressionError",
    "RuntimeFailure",
    "ShapeError",
    "ValidationError",
    "monitor_performance",
    "validate_choice",
    "validate_positive",
    "validate_section_keys",
]
