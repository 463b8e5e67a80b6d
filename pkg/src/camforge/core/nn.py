"""Module containers and the parameterised layers built on :mod:`ops`."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from camforge.core import ops, profile
from camforge.core.tensor import Parameter, Tensor, get_default_dtype


class Module:
    """Minimal layer container: ordered parameters, buffers and children.

    Attribute assignment registers Parameters, child Modules and numpy
    buffers (BatchNorm running statistics) so dotted names are stable.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", False)
        object.__setattr__(self, "path", "")

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._parameters.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def assign_names(self) -> None:
        """Stamp dotted paths on every submodule and parameter."""
        for name, mod in self.named_modules():
            object.__setattr__(mod, "path", name)
        for name, p in self.named_parameters():
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        prof = profile.active_profiler()
        if prof is None:
            return self.forward(*args, **kwargs)
        with prof.scope(self.path):
            return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _zeros(*shape) -> np.ndarray:
    return np.zeros(shape, dtype=get_default_dtype())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(_zeros(out_features, in_features))
        if bias:
            self.bias = Parameter(_zeros(out_features))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        dilation: int = 1,
        padding: int = 0,
        bias: bool = False,
    ):
        super().__init__()
        self.stride, self.dilation, self.padding = stride, dilation, padding
        self.weight = Parameter(_zeros(out_channels, in_channels, kernel_size))
        self.bias = Parameter(_zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: tuple[int, int] = (3, 3),
        stride: tuple[int, int] = (1, 1),
        padding: tuple[int, int] = (1, 1),
        bias: bool = False,
    ):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter(_zeros(out_channels, in_channels, *kernel_size))
        self.bias = Parameter(_zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x, self.weight, self.bias, self.stride[0], self.stride[1], self.padding[0], self.padding[1]
        )


class BatchNorm(Module):
    """Batch norm over channel axis 1 (``(B, C, ...)`` layouts)."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1, affine: bool = True):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        if affine:
            self.weight = Parameter(np.ones(num_features, dtype=get_default_dtype()))
            self.bias = Parameter(_zeros(num_features))
        else:
            self.weight = self.bias = None
        self.register_buffer("running_mean", _zeros(num_features))
        self.register_buffer("running_var", np.ones(num_features, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            eps=self.eps,
            momentum=self.momentum,
            channel_axis=1,
        )


def kaiming_uniform_(p: Parameter, rng: np.random.Generator) -> None:
    """He/Kaiming uniform init with fan-in scaling and ReLU gain."""
    fan_in = int(np.prod(p.shape[1:])) if p.ndim > 1 else p.shape[0]
    bound = math.sqrt(6.0 / fan_in)
    p.data[...] = rng.uniform(-bound, bound, size=p.shape).astype(p.dtype)


def init_parameters(module: Module, seed: int) -> None:
    """Deterministic init: Kaiming-uniform weights, zero biases, BN gamma=1 beta=0."""
    rng = np.random.default_rng(seed)
    for _, mod in module.named_modules():
        for name, p in mod._parameters.items():
            if p is None:
                continue
            if isinstance(mod, BatchNorm):
                p.data[...] = 1.0 if name == "weight" else 0.0
            elif name == "bias" or p.ndim == 1:
                p.data[...] = 0.0
            else:
                kaiming_uniform_(p, rng)
