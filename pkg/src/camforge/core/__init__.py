"""Deterministic CPU tensor kernels with tape-based reverse-mode gradients."""

from camforge.core import ops
from camforge.core.nn import BatchNorm, Conv1d, Conv2d, Linear, Module, ModuleList, init_parameters
from camforge.core.tensor import (
    Parameter,
    Tape,
    Tensor,
    backward,
    get_default_dtype,
    precision,
    set_default_dtype,
)

__all__ = [
    "ops",
    "BatchNorm",
    "Conv1d",
    "Conv2d",
    "Linear",
    "Module",
    "ModuleList",
    "init_parameters",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "get_default_dtype",
    "precision",
    "set_default_dtype",
]
