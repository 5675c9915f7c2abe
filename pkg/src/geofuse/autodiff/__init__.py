"""Minimal reverse-mode autodiff on numpy arrays."""
from . import ops
from .optim import Adam
from .tensor import Tensor, no_grad, set_debug

__all__ = ["Tensor", "ops", "Adam", "no_grad", "set_debug"]
