"""Reverse-mode autodiff: engine, primitive ops, optimizer."""
from .engine import Tensor, backward, grad_enabled, no_grad
from .optim import MissingGradientError, ParamStore, adam_step
from . import ops

__all__ = [
    "Tensor", "backward", "no_grad", "grad_enabled",
    "ParamStore", "adam_step", "MissingGradientError", "ops",
]
