"""Operation accounting hooks: analytic MAC formulas and a scoped recorder.

Ops report their geometry here while a :class:`Profiler` is active; the
analysis module turns the recorded rows into complexity reports.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator


def conv1d_macs(c_in: int, c_out: int, kernel: int, t_out: int) -> int:
    return c_out * c_in * kernel * t_out


def conv2d_macs(c_in: int, c_out: int, kernel_f: int, kernel_t: int, f_out: int, t_out: int) -> int:
    return c_out * c_in * kernel_f * kernel_t * f_out * t_out


def linear_macs(d_in: int, d_out: int, positions: int) -> int:
    return d_out * d_in * positions


@dataclass
class OpCost:
    macs: int = 0
    flops: int = 0


class Profiler:
    """Accumulates per-scope MAC/FLOP counts.

    Scopes are dotted module paths pushed by ``Module.__call__``; costs go
    to the innermost scope.
    """

    def __init__(self):
        self.rows: "OrderedDict[str, OpCost]" = OrderedDict()
        self._scopes: list[str] = []

    @contextlib.contextmanager
    def scope(self, name: str) -> Iterator[None]:
        self._scopes.append(name)
        self.rows.setdefault(name, OpCost())
        try:
            yield
        finally:
            self._scopes.pop()

    def emit(self, macs: int, flops: int) -> None:
        name = self._scopes[-1] if self._scopes else ""
        row = self.rows.setdefault(name, OpCost())
        row.macs += int(macs)
        row.flops += int(flops)


_active: list[Profiler] = []


def active_profiler() -> Profiler | None:
    return _active[-1] if _active else None


@contextlib.contextmanager
def profiling() -> Iterator[Profiler]:
    prof = Profiler()
    _active.append(prof)
    try:
        yield prof
    finally:
        _active.remove(prof)


def emit(macs: int, flops: int) -> None:
    if _active:
        _active[-1].emit(macs, flops)
