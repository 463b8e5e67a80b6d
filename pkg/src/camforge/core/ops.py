"""Differentiable tensor kernels.

Every op computes its forward pass with numpy, refuses non-finite results,
reports its cost to an active profiler and, when a tape is recording and
an input requires grad, records a closure producing input gradients.

Layout conventions: conv1d works on ``(..., C, T)``, conv2d on
``(..., C, F, T)``, linear on the trailing axis. Leading axes are batch.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from camforge.core import profile
from camforge.core.tensor import Tensor, _contiguous, active_tape
from camforge.errors import ConfigurationError, CorruptWeightsError, InputError, NumericalError

__all__ = [
    "add",
    "mul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "relu",
    "sigmoid",
    "linear",
    "conv1d",
    "conv2d",
    "batchnorm",
    "global_avg_pool",
    "segment_boundaries",
    "segment_avg_pool",
    "expand_segments",
    "stats_pool",
    "l2_normalize",
    "matmul",
    "aam_logits",
    "cross_entropy",
]

STATS_VAR_FLOOR = 1e-10


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericalError(f"{op}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = _contiguous(np.asarray(data))
    out.grad = None
    out._on_tape = False
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, tuple(inputs), out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    profile.emit(0, out.size)
    return _result(
        "add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    profile.emit(0, out.size)
    return _result(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _result("sum", out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)
    n = x.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    profile.emit(0, x.size)
    return _result("mean", out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axis1: int, axis2: int) -> Tensor:
    return _result(
        "transpose",
        np.swapaxes(x.data, axis1, axis2),
        (x,),
        lambda g: (np.swapaxes(g, axis1, axis2),),
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    profile.emit(0, x.size)
    return _result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function via tanh; stable for any finite input.

    Values lie in (0, 1) mathematically. In float32 the result rounds to
    exactly 1.0 once x exceeds about 17 (and to 0.0 below about -88):
    no clamping is applied, so the representable value closest to the
    true one is returned.
    """
    s = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    profile.emit(0, x.size)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------------
# affine layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map along the trailing axis; weight is ``(D_out, D_in)``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ConfigurationError(f"linear: input width {x.shape[-1]} != weight D_in {d_in}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    positions = x.size // d_in
    macs = profile.linear_macs(d_in, d_out, positions)
    profile.emit(macs, 2 * macs + (d_out * positions if bias is not None else 0))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        grads = [g @ weight.data, g2.T @ x.data.reshape(-1, d_in)]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result("linear", out, inputs, backward)


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """1-D convolution over time with zero padding on both edges.

    ``x`` is ``(C_in, T)`` or ``(B, C_in, T)``; weight is ``(C_out, C_in, K)``.
    """
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigurationError("conv1d: stride and dilation must be >= 1, padding >= 0")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    b, c, t = xd.shape
    c_out, c_w, k = weight.shape
    if c_w != c:
        raise ConfigurationError(f"conv1d: input has {c} channels, weight expects {c_w}")
    span = dilation * (k - 1) + 1
    t_pad = t + 2 * padding
    if t_pad < span:
        raise ConfigurationError(f"conv1d: padded length {t_pad} shorter than receptive field {span}")
    t_out = (t_pad - span) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation][:, :, :t_out]
    cols = win.transpose(0, 1, 3, 2).reshape(b, c * k, t_out)
    w2 = weight.data.reshape(c_out, c * k)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]

    macs = b * profile.conv1d_macs(c, c_out, k, t_out)
    profile.emit(macs, 2 * macs + (b * c_out * t_out if bias is not None else 0))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = (w2.T @ g).reshape(b, c, k, t_out)
        gxp = np.zeros((b, c, t_pad), dtype=g.dtype)
        stop = stride * (t_out - 1) + 1
        for j in range(k):
            start = j * dilation
            gxp[:, :, start : start + stop : stride] += gcols[:, :, j, :]
        gx = gxp[:, :, padding : padding + t]
        grads = [gx[0] if unbatched else gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return _result("conv1d", out[0] if unbatched else out, inputs, backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride_f: int = 1,
    stride_t: int = 1,
    padding_f: int = 0,
    padding_t: int = 0,
) -> Tensor:
    """2-D convolution over (frequency, time).

    ``x`` is ``(C_in, F, T)`` or ``(B, C_in, F, T)``; weight is
    ``(C_out, C_in, Kf, Kt)``.
    """
    if min(stride_f, stride_t) < 1 or min(padding_f, padding_t) < 0:
        raise ConfigurationError("conv2d: strides must be >= 1, padding >= 0")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    b, c, f, t = xd.shape
    c_out, c_w, kf, kt = weight.shape
    if c_w != c:
        raise ConfigurationError(f"conv2d: input has {c} channels, weight expects {c_w}")
    f_pad, t_pad = f + 2 * padding_f, t + 2 * padding_t
    if f_pad < kf or t_pad < kt:
        raise ConfigurationError("conv2d: padded input smaller than kernel")
    f_out = (f_pad - kf) // stride_f + 1
    t_out = (t_pad - kt) // stride_t + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding_f, padding_f), (padding_t, padding_t)))
    win = sliding_window_view(xp, (kf, kt), axis=(2, 3))[:, :, ::stride_f, ::stride_t]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kf * kt, f_out * t_out)
    w2 = weight.data.reshape(c_out, c * kf * kt)
    out = (w2 @ cols).reshape(b, c_out, f_out, t_out)
    if bias is not None:
        out += bias.data[:, None, None]

    macs = b * profile.conv2d_macs(c, c_out, kf, kt, f_out, t_out)
    profile.emit(macs, 2 * macs + (b * c_out * f_out * t_out if bias is not None else 0))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = g.reshape(b, c_out, f_out * t_out)
        gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = (w2.T @ g3).reshape(b, c, kf, kt, f_out, t_out)
        gxp = np.zeros((b, c, f_pad, t_pad), dtype=g.dtype)
        f_stop = stride_f * (f_out - 1) + 1
        t_stop = stride_t * (t_out - 1) + 1
        for i in range(kf):
            for j in range(kt):
                gxp[:, :, i : i + f_stop : stride_f, j : j + t_stop : stride_t] += gcols[:, :, i, j]
        gx = gxp[:, :, padding_f : padding_f + f, padding_t : padding_t + t]
        grads = [gx[0] if unbatched else gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result("conv2d", out[0] if unbatched else out, inputs, backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor | None,
    beta: Tensor | None,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = False,
    eps: float = 1e-5,
    momentum: float = 0.1,
    channel_axis: int = 1,
) -> Tensor:
    """Batch normalisation over every axis except ``channel_axis``.

    In training mode batch statistics are used and the running buffers are
    updated in place by exponential moving average (unbiased variance, as
    is conventional). Inference mode reads the running buffers only.
    """
    axis = channel_axis % x.ndim
    n_ch = x.shape[axis]
    if running_mean.shape != (n_ch,) or running_var.shape != (n_ch,):
        raise ConfigurationError(f"batchnorm: expected {n_ch} channels in running statistics")
    if (running_var < 0).any():
        raise CorruptWeightsError("batchnorm: running_var has negative entries")
    bshape = [1] * x.ndim
    bshape[axis] = n_ch
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    n = x.size // n_ch

    xd = x.data
    if training:
        mu = xd.mean(axis=reduce_axes)
        var = xd.var(axis=reduce_axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1) if n > 1 else 1.0)
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape).astype(xd.dtype)) * inv_std.reshape(bshape)
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(bshape)
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    profile.emit(0, 2 * x.size)

    inputs = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        gxhat = g * gamma.data.reshape(bshape) if gamma is not None else g
        if training:
            s1 = gxhat.sum(axis=reduce_axes).reshape(bshape)
            s2 = (gxhat * xhat).sum(axis=reduce_axes).reshape(bshape)
            gx = inv_std.reshape(bshape) / n * (n * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=reduce_axes))
        if beta is not None:
            grads.append(g.sum(axis=reduce_axes))
        return grads

    return _result("batchnorm", out, inputs, backward)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing (time) axis: ``(..., C, T) -> (..., C)``."""
    if x.shape[-1] < 1:
        raise InputError("global_avg_pool: need at least one frame")
    return mean(x, axis=-1)


def segment_boundaries(num_frames: int, segment_length: int) -> list[int]:
    """Start frames of consecutive fixed-length segments plus the end frame.

    The final segment holds the remainder (1..segment_length frames).
    """
    if num_frames < 1 or segment_length < 1:
        raise InputError("segment_boundaries: num_frames and segment_length must be >= 1")
    return list(range(0, num_frames, segment_length)) + [num_frames]


def segment_avg_pool(x: Tensor, segment_length: int) -> tuple[list[int], Tensor]:
    """Per-segment means over time: ``(..., C, T) -> (..., C, K)``."""
    t = x.shape[-1]
    bounds = segment_boundaries(t, segment_length)
    lengths = np.diff(bounds).astype(x.dtype)
    # per-slice mean (not reduceat) so a single segment matches the global mean exactly
    out = np.stack([x.data[..., a:b].mean(axis=-1) for a, b in zip(bounds, bounds[1:])], axis=-1)
    profile.emit(0, x.size)

    def backward(g):
        return (np.repeat(g / lengths, np.diff(bounds), axis=-1),)

    return bounds, _result("segment_avg_pool", out.astype(x.dtype), (x,), backward)


def expand_segments(e: Tensor, boundaries: Sequence[int]) -> Tensor:
    """Broadcast per-segment vectors back to frames: ``(..., K) -> (..., T)``."""
    lengths = np.diff(boundaries)
    if e.shape[-1] != len(lengths):
        raise ConfigurationError(
            f"expand_segments: {e.shape[-1]} segment vectors for {len(lengths)} segments"
        )
    out = np.repeat(e.data, lengths, axis=-1)
    starts = np.asarray(boundaries[:-1])
    return _result(
        "expand_segments", out, (e,), lambda g: (np.add.reduceat(g, starts, axis=-1),)
    )


def stats_pool(x: Tensor) -> Tensor:
    """Concatenated mean and population std over time: ``(..., C, T) -> (..., 2C)``.

    The variance is floored at 1e-10 before the square root.
    """
    t = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    floored = var <= STATS_VAR_FLOOR
    std = np.sqrt(np.maximum(var, STATS_VAR_FLOOR)).astype(x.dtype)
    out = np.concatenate([mu[..., 0], std[..., 0]], axis=-1)
    profile.emit(0, 2 * x.size)

    def backward(g):
        c = x.shape[-2]
        gm = g[..., :c, None]
        gs = np.where(floored, 0.0, g[..., c:, None]).astype(g.dtype)
        return (gm / t + gs * centered / (t * std),)

    return _result("stats_pool", out, (x,), backward)


# ---------------------------------------------------------------------------
# loss pieces
# ---------------------------------------------------------------------------


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _result("l2_normalize", y, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0]:
        raise ConfigurationError(f"matmul: {a.shape} @ {b.shape}")
    macs = a.shape[0] * a.shape[1] * b.shape[1]
    profile.emit(macs, 2 * macs)
    return _result(
        "matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def aam_logits(cosine: Tensor, labels: np.ndarray, margin: float, scale: float) -> Tensor:
    """Additive angular margin logits.

    ``scale * cos(theta)`` everywhere, except the target column which gets
    ``scale * cos(theta + margin)``. Where ``theta + margin`` would pass pi
    the target uses ``cos(theta) - margin * sin(margin)`` so the logit stays
    monotone in cos(theta).
    """
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_cls = cosine.shape
    if labels.shape != (batch,):
        raise InputError(f"aam_logits: expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise InputError(f"aam_logits: labels must lie in [0, {n_cls})")
    rows = np.arange(batch)
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    threshold = math.cos(math.pi - margin)

    c = np.clip(cosine.data[rows, labels].astype(np.float64), -1.0, 1.0)
    sine = np.sqrt(np.clip(1.0 - c * c, 0.0, 1.0))
    in_range = c > threshold
    phi = np.where(in_range, c * cos_m - sine * sin_m, c - margin * sin_m)
    dphi = np.where(in_range, cos_m + sin_m * c / np.maximum(sine, 1e-6), 1.0)

    out = scale * cosine.data
    out[rows, labels] = scale * phi
    profile.emit(0, out.size)

    def backward(g):
        gc = scale * g
        gc[rows, labels] *= dphi.astype(g.dtype)
        return (gc,)

    return _result("aam_logits", out.astype(cosine.dtype), (cosine,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_cls = logits.shape
    if labels.shape != (batch,) or (labels.size and (labels.min() < 0 or labels.max() >= n_cls)):
        raise InputError(f"cross_entropy: labels must be {batch} ints in [0, {n_cls})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_norm
    rows = np.arange(batch)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _result("cross_entropy", loss, (logits,), backward)
