"""Minimal reverse-mode autodiff, layers and optimiser."""

from .layers import MLP, Conv2d, Linear
from .params import ParameterStore, adam_step, read_checkpoint, save_checkpoint
from .tensor import Tape, Tensor

__all__ = ["Tape", "Tensor", "ParameterStore", "adam_step", "save_checkpoint", "read_checkpoint",
           "Linear", "MLP", "Conv2d"]
