"""Parameter counts, FLOP accounting and single-thread RTF measurement."""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from camforge.core import profile
from camforge.core.nn import Module
from camforge.core.profile import conv1d_macs, conv2d_macs, linear_macs
from camforge.core.tensor import Tensor
from camforge.errors import ConfigurationError
from camforge.features import FbankConfig, fbank, num_frames, AudioBuffer

__all__ = [
    "LayerRow",
    "ComplexityReport",
    "count_params",
    "count_flops",
    "frames_for_seconds",
    "flops_convention_sweep",
    "benchmark_rtf",
    "RtfResult",
    "conv1d_macs",
    "conv2d_macs",
    "linear_macs",
]

FLOP_CONVENTION = (
    "flops = 2*macs + 1 per bias element per position + 2 per BN element "
    "+ 1 per activation/elementwise/pooled element"
)
REFERENCE_FLOPS_G = 1.72


@dataclass
class LayerRow:
    name: str
    param_count: int = 0
    macs: int = 0
    flops: int = 0


@dataclass
class ComplexityReport:
    rows: list[LayerRow]
    input_spec: dict = field(default_factory=dict)
    flop_convention: str = FLOP_CONVENTION
    notes: list[str] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.param_count for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def to_tsv(self) -> str:
        lines = [f"{r.name}\t{r.param_count}\t{r.macs}\t{r.flops}" for r in self.rows]
        lines.append(f"total\t{self.total_params}\t{self.total_macs}\t{self.total_flops}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max([len(r.name) for r in self.rows] + [5])
        out = [f"{'layer':<{width}}  {'params':>10}  {'MACs':>14}  {'FLOPs':>14}"]
        out.append("-" * len(out[0]))
        for r in self.rows:
            out.append(f"{r.name:<{width}}  {r.param_count:>10}  {r.macs:>14}  {r.flops:>14}")
        out.append("-" * len(out[0]))
        out.append(f"total params {self.total_params / 1e6:.2f} M ({self.total_params})")
        if self.input_spec:
            spec = self.input_spec
            out.append(
                f"total MACs {self.total_macs / 1e9:.3f} G, FLOPs {self.total_flops / 1e9:.3f} G "
                f"for {spec.get('seconds')} s ({spec.get('frames')} frames)"
            )
            out.append(f"convention: {self.flop_convention}")
        out.extend(self.notes)
        return "\n".join(out) + "\n"


def _direct_param_counts(model: Module) -> dict[str, int]:
    counts = {}
    for name, mod in model.named_modules():
        n = sum(p.size for p in mod._parameters.values() if p is not None)
        if n:
            counts[name] = n
    return counts


def count_params(model: Module) -> ComplexityReport:
    """One row per module owning parameters. BN running statistics are
    buffers and are not counted."""
    rows = [LayerRow(name, n) for name, n in _direct_param_counts(model).items()]
    return ComplexityReport(rows)


def frames_for_seconds(seconds: float, config: FbankConfig | None = None) -> int:
    config = config or FbankConfig()
    return num_frames(int(round(seconds * config.sample_rate)), config)


def count_flops(model: Module, input_frames: int, seconds: float | None = None) -> ComplexityReport:
    """Analytic per-layer MACs/FLOPs for one utterance of ``input_frames`` frames.

    Costs are recorded from the kernels' own geometry during an
    inference-mode pass on a single utterance.
    """
    feat_dim = model.config.feat_dim
    x = Tensor(np.random.default_rng(0).standard_normal((1, feat_dim, input_frames)))
    was_training = model.training
    model.eval()
    try:
        with profile.profiling() as prof:
            model(x)
    finally:
        model.train(was_training)
    params = _direct_param_counts(model)
    rows = []
    for name, cost in prof.rows.items():
        if cost.macs or cost.flops or name in params:
            rows.append(LayerRow(name or "<model>", params.get(name, 0), cost.macs, cost.flops))
    seen = {r.name for r in rows}
    rows.extend(LayerRow(n, c) for n, c in params.items() if n not in seen)
    spec = {"frames": input_frames, "seconds": seconds}
    return ComplexityReport(rows, spec)


def flops_convention_sweep(
    model: Module, durations=(1.0, 2.0, 3.0), target_g: float = REFERENCE_FLOPS_G
) -> tuple[list[dict], dict]:
    """Evaluate MAC x1 and MAC x2 totals at several input durations.

    Returns every sweep point and the one closest to ``target_g``.
    """
    points = []
    for seconds in durations:
        frames = frames_for_seconds(seconds)
        report = count_flops(model, frames, seconds)
        for convention, value in (("macs", report.total_macs), ("2*macs+adds", report.total_flops)):
            points.append(
                {
                    "seconds": seconds,
                    "frames": frames,
                    "convention": convention,
                    "giga": value / 1e9,
                    "rel_delta": value / 1e9 / target_g - 1.0,
                }
            )
    best = min(points, key=lambda p: abs(p["rel_delta"]))
    return points, best


@dataclass
class RtfResult:
    rtf: float
    audio_seconds: float
    median_seconds: float
    min_seconds: float
    max_seconds: float
    times: list[float]
    threads: int
    include_features: bool

    def summary(self) -> str:
        return (
            f"RTF {self.rtf:.4f} (median {self.median_seconds:.4f} s over {len(self.times)} runs, "
            f"min {self.min_seconds:.4f} s, max {self.max_seconds:.4f} s, "
            f"audio {self.audio_seconds:g} s, threads {self.threads}, "
            f"features {'included' if self.include_features else 'excluded'})"
        )


def environment_report() -> str:
    libs = ", ".join(
        f"{i.get('internal_api')}={i.get('num_threads')}" for i in threadpool_info()
    ) or "none"
    return (
        f"python {platform.python_version()} numpy {np.__version__} "
        f"cpu {platform.machine()} cores {os.cpu_count()} blas-threads [{libs}]"
    )


def benchmark_rtf(
    model: Module,
    audio_seconds: float,
    repeats: int = 5,
    include_features: bool = False,
    seed: int = 0,
    clock: Callable[[], float] = time.perf_counter,
    runner: Callable[[], object] | None = None,
) -> RtfResult:
    """Median wall-clock processing time divided by audio duration.

    BLAS/OpenMP pools are limited to one thread for the whole measurement.
    Weight loading and audio decoding are outside the timed region; the
    feature front-end is timed only when ``include_features`` is set. One
    untimed warm-up run precedes the ``repeats`` timed runs.
    """
    if repeats < 3:
        raise ConfigurationError("benchmark_rtf needs repeats >= 3")
    rng = np.random.default_rng(seed)
    audio = AudioBuffer((0.1 * rng.standard_normal(int(round(audio_seconds * 16000)))).astype(np.float32))
    feats = fbank(audio)
    model.eval()

    def default_runner():
        x = fbank(audio) if include_features else feats
        return model(Tensor(x.data[None]))

    run = runner or default_runner
    with threadpool_limits(limits=1):
        threads = max([i.get("num_threads", 1) for i in threadpool_info()] + [1])
        run()
        times = []
        for _ in range(repeats):
            start = clock()
            run()
            times.append(clock() - start)
    median = statistics.median(times)
    return RtfResult(
        rtf=median / audio_seconds,
        audio_seconds=audio_seconds,
        median_seconds=median,
        min_seconds=min(times),
        max_seconds=max(times),
        times=times,
        threads=threads,
        include_features=include_features,
    )
