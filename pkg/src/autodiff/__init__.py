"""Minimal dense-tensor engine: tape-based reverse-mode differentiation, layers' ops, Adam."""

from .gradcheck import GradcheckReport, gradcheck, gradcheck_report
from .optim import Adam, AdamState, adam_step
from .serialization import load_weights, save_weights
from .tensor import Tape, Tensor

__all__ = [
    "Adam",
    "AdamState",
    "GradcheckReport",
    "Tape",
    "Tensor",
    "adam_step",
    "gradcheck",
    "gradcheck_report",
    "load_weights",
    "save_weights",
]
