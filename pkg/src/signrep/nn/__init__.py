"""Tensor engine, layers, optimizer, checkpointing, gradient checks."""

from . import checkpoint, functional, gradcheck, layers, optim, tensor
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "Parameter",
    "Tensor",
    "checkpoint",
    "functional",
    "gradcheck",
    "layers",
    "no_grad",
    "optim",
    "tensor",
]
