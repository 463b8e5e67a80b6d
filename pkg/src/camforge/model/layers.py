"""Building blocks: FCM front-end, D-TDNN layers with context-aware masking."""

from __future__ import annotations

from typing import Sequence

from camforge.core import ops
from camforge.core.nn import BatchNorm, Conv1d, Conv2d, Linear, Module, ModuleList
from camforge.core.tensor import Tensor
from camforge.errors import ConfigurationError


class ResBlock2d(Module):
    """Basic residual block: (conv3x3-BN-ReLU, conv3x3-BN) + shortcut, ReLU.

    The first conv strides along frequency only; a strided 1x1 conv + BN
    replaces the identity shortcut whenever the frequency stride is not 1.
    """

    def __init__(self, channels: int, freq_stride: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = Conv2d(channels, channels, (kernel, kernel), (freq_stride, 1), (pad, pad))
        self.bn1 = BatchNorm(channels)
        self.conv2 = Conv2d(channels, channels, (kernel, kernel), (1, 1), (pad, pad))
        self.bn2 = BatchNorm(channels)
        if freq_stride != 1:
            self.shortcut_conv = Conv2d(channels, channels, (1, 1), (freq_stride, 1), (0, 0))
            self.shortcut_bn = BatchNorm(channels)
        else:
            self.shortcut_conv = None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        short = x if self.shortcut_conv is None else self.shortcut_bn(self.shortcut_conv(x))
        return ops.relu(ops.add(out, short))


class FCM(Module):
    """2-D residual stem; output flattened over (channels, frequency)."""

    def __init__(self, feat_dim: int, channels: int, freq_strides: Sequence[int], kernel: int = 3):
        super().__init__()
        self.feat_dim = feat_dim
        self.channels = channels
        self.freq_strides = tuple(freq_strides)
        pad = kernel // 2
        self.stem_conv = Conv2d(1, channels, (kernel, kernel), (1, 1), (pad, pad))
        self.stem_bn = BatchNorm(channels)
        self.blocks = ModuleList(ResBlock2d(channels, s, kernel) for s in self.freq_strides)

    def freq_extents(self) -> list[int]:
        """Frequency extent after the stem and after each residual block."""
        extents = [self.feat_dim]
        for s in self.freq_strides:
            extents.append((extents[-1] - 1) // s + 1)
        return extents

    @property
    def out_channels(self) -> int:
        return self.channels * self.freq_extents()[-1]

    def forward(self, features: Tensor) -> Tensor:
        if features.shape[-2] != self.feat_dim:
            raise ConfigurationError(
                f"FCM expects {self.feat_dim} frequency bins, got {features.shape[-2]}"
            )
        b, f, t = features.shape
        x = ops.reshape(features, (b, 1, f, t))
        x = ops.relu(self.stem_bn(self.stem_conv(x)))
        for block in self.blocks:
            x = block(x)
        return ops.reshape(x, (b, x.shape[1] * x.shape[2], t))


class InputTDNN(Module):
    """Conv1d-BN-ReLU with temporal subsampling."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int):
        super().__init__()
        self.conv = Conv1d(in_channels, out_channels, kernel, stride=stride, padding=kernel // 2)
        self.bn = BatchNorm(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class CamModule(Module):
    """Ratio-mask predictor: sigmoid(W2 relu(W1 e + b1) + b2).

    ``linear1`` holds W1 (hidden x in_channels) and b1, ``linear2`` holds W2
    (out_channels x hidden) and b2. The context vector ``e`` is the global
    mean of X plus, with segment pooling enabled, the mean of the segment
    containing each frame.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        hidden: int,
        segment_length: int = 100,
        segment_pooling: bool = True,
    ):
        super().__init__()
        self.linear1 = Linear(in_channels, hidden)
        self.linear2 = Linear(hidden, out_channels)
        self.segment_length = segment_length
        self.segment_pooling = segment_pooling

    def forward(self, x: Tensor) -> Tensor:
        """Mask of shape ``(B, out_channels, T)`` computed from ``x`` ``(B, C, T)``."""
        e_g = ops.global_avg_pool(x)
        if self.segment_pooling:
            bounds, e_s = ops.segment_avg_pool(x, self.segment_length)
            return cam_mask(e_g, e_s, self, bounds)
        return cam_mask(e_g, None, self, [0, x.shape[-1]])


def cam_mask(e_g: Tensor, e_s: Tensor | None, cam: CamModule, boundaries: Sequence[int]) -> Tensor:
    """Frame-level mask from pooled context.

    ``e_g`` is ``(..., C)``; ``e_s`` is ``(..., C, K)`` with one column per
    segment of ``boundaries`` (or None for global-only pooling). Returns
    ``(..., C', T)``, constant within each segment.
    """
    if boundaries[0] != 0 or any(b >= c for b, c in zip(boundaries, boundaries[1:])):
        raise ConfigurationError("cam_mask: boundaries must increase from 0 and cover [0, T)")
    g = ops.reshape(e_g, e_g.shape + (1,))
    if e_s is None:
        if len(boundaries) != 2:
            raise ConfigurationError("cam_mask: global-only pooling takes a single segment")
        ctx = g
    else:
        if e_s.shape[:-1] != e_g.shape or e_s.shape[-1] != len(boundaries) - 1:
            raise ConfigurationError(
                f"cam_mask: segment embeddings {e_s.shape} do not match {e_g.shape} "
                f"and {len(boundaries) - 1} segments"
            )
        ctx = ops.add(g, e_s)
    h = ops.relu(cam.linear1(ops.transpose(ctx, -1, -2)))
    m = ops.sigmoid(cam.linear2(h))
    return ops.expand_segments(ops.transpose(m, -1, -2), boundaries)


class DTdnnLayer(Module):
    """One densely connected layer.

    X = FNN(S) = Linear(ReLU(BN(S))) to the bottleneck width,
    F = Conv(ReLU(BN(X))) producing ``growth_rate`` channels,
    F~ = F * M with M from the CAM module, output = concat(S, F~).
    """

    def __init__(
        self,
        in_channels: int,
        growth_rate: int,
        bottleneck: int,
        kernel: int,
        dilation: int,
        cam_hidden: int | None,
        segment_length: int = 100,
        segment_pooling: bool = True,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.growth_rate = growth_rate
        self.fnn_bn = BatchNorm(in_channels)
        self.fnn_linear = Conv1d(in_channels, bottleneck, 1)
        self.tdnn_bn = BatchNorm(bottleneck)
        self.tdnn_conv = Conv1d(
            bottleneck, growth_rate, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2
        )
        if cam_hidden:
            self.cam = CamModule(bottleneck, growth_rate, cam_hidden, segment_length, segment_pooling)
        else:
            self.cam = None

    def forward(self, s: Tensor) -> Tensor:
        if s.shape[-2] != self.in_channels:
            raise ConfigurationError(
                f"D-TDNN layer expects {self.in_channels} channels, got {s.shape[-2]}"
            )
        if s.ndim == 2:
            out = self.forward(ops.reshape(s, (1,) + s.shape))
            return ops.reshape(out, out.shape[1:])
        x = self.fnn_linear(ops.relu(self.fnn_bn(s)))
        f = self.tdnn_conv(ops.relu(self.tdnn_bn(x)))
        if self.cam is not None:
            f = ops.mul(f, self.cam(x))
        return ops.concat([s, f], axis=-2)


def dtdnn_layer_forward(s_concat: Tensor, layer: DTdnnLayer) -> Tensor:
    return layer(s_concat)


class DenseBlock(Module):
    def __init__(self, in_channels: int, num_layers: int, **layer_kwargs):
        super().__init__()
        growth = layer_kwargs["growth_rate"]
        self.layers = ModuleList(
            DTdnnLayer(in_channels + i * growth, **layer_kwargs) for i in range(num_layers)
        )
        self.out_channels = in_channels + num_layers * growth

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Transition(Module):
    """BN-ReLU-1x1 conv compressing the dense stream."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.bn = BatchNorm(in_channels)
        self.conv = Conv1d(in_channels, out_channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(ops.relu(self.bn(x)))


class BNReLU(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.bn = BatchNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(x))


class StatsPool(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.stats_pool(x)


class EmbeddingHead(Module):
    """Linear (no bias) + BN mapping pooled statistics to the embedding."""

    def __init__(self, in_features: int, embedding_dim: int):
        super().__init__()
        self.linear = Linear(in_features, embedding_dim, bias=False)
        self.bn = BatchNorm(embedding_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.linear(x))
