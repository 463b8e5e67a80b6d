"""Tensor, Parameter and the operation tape used for reverse-mode gradients."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from camforge.errors import UsageError

_default_dtype = np.dtype(np.float32)


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """Switch the dtype new tensors are created with (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily create tensors in ``dtype`` (64-bit accumulation flag)."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _contiguous(a: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    return a if a.flags.c_contiguous else a.copy()


class Tensor:
    """Dense float array plus the bookkeeping needed for autograd.

    Dimension order is documented per op; the model works on
    ``(batch, channels, time)`` and ``(batch, channels, freq, time)``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_on_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _contiguous(np.asarray(data, dtype=dtype or _default_dtype))
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._on_tape = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # Arithmetic sugar delegates to the differentiable ops.
    def __add__(self, other):
        from camforge.core import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from camforge.core import ops

        return ops.mul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a unique dotted name and a zero-initialised gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_active_tapes: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _active_tapes[-1] if _active_tapes else None


class Tape:
    """Ordered record of executed ops; used as a context manager.

    >>> with Tape() as tape:
    ...     loss = ops.sum(ops.mul(x, x))
    >>> tape.backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.visited: list[str] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        output._on_tape = True
        self.records.append(_Record(op, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(.) to every leaf tensor that requires grad.

        Gradients accumulate into ``.grad``; each record is visited once,
        in reverse execution order.
        """
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise UsageError("tape already replayed; record a new one")
        if not any(r.output is loss for r in self.records):
            raise UsageError("loss was not produced under this tape")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            self.visited.append(rec.op)
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._on_tape:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = gi if prev is None else prev + gi
                else:
                    inp.grad += gi.astype(inp.grad.dtype, copy=False)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    if tape is None:
        raise UsageError("backward called without a recorded tape")
    tape.backward(loss)
