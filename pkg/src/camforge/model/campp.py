"""The assembled network and the embedding extraction entry points."""

from __future__ import annotations

import numpy as np

from camforge.core import ops
from camforge.core.nn import BatchNorm, Module, ModuleList, init_parameters
from camforge.core.tensor import Tensor
from camforge.errors import InputError
from camforge.model.config import ModelConfig, get_preset
from camforge.model.layers import (
    FCM,
    BNReLU,
    DenseBlock,
    EmbeddingHead,
    InputTDNN,
    StatsPool,
    Transition,
)


class CAMPPlus(Module):
    """FCM -> input TDNN -> dense blocks with transitions -> stats pooling -> embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.fcm_enabled:
            self.fcm = FCM(config.feat_dim, config.fcm_channels, config.fcm_freq_strides, config.fcm_kernel)
            channels = self.fcm.out_channels
        else:
            self.fcm = None
            channels = config.feat_dim
        self.input_tdnn = InputTDNN(channels, config.input_channels, config.input_kernel, config.input_stride)
        channels = config.input_channels

        self.blocks = ModuleList()
        self.transitions = ModuleList()
        pooled = 0
        for num_layers, dilation in zip(config.block_layers, config.block_dilations):
            block = DenseBlock(
                channels,
                num_layers,
                growth_rate=config.growth_rate,
                bottleneck=config.bottleneck_channels,
                kernel=config.block_kernel,
                dilation=dilation,
                cam_hidden=config.cam_hidden if config.cam_enabled else None,
                segment_length=config.segment_length,
                segment_pooling=config.segment_pooling,
            )
            self.blocks.append(block)
            channels = int(block.out_channels * config.transition_compression)
            self.transitions.append(Transition(block.out_channels, channels))
            pooled += channels
        if config.stats_source == "last":
            pooled = channels
        self.out_nonlinear = BNReLU(pooled)
        self.pool = StatsPool()
        self.head = EmbeddingHead(2 * pooled, config.embedding_dim)

        for _, mod in self.named_modules():
            if isinstance(mod, BatchNorm):
                mod.eps, mod.momentum = config.bn_eps, config.bn_momentum
        self.assign_names()

    @property
    def min_frames(self) -> int:
        """Smallest input length giving two frames after subsampling."""
        return self.config.input_stride + 1

    def frame_level(self, features: Tensor) -> Tensor:
        x = self.fcm(features) if self.fcm is not None else features
        x = self.input_tdnn(x)
        outputs = []
        for block, transition in zip(self.blocks, self.transitions):
            x = transition(block(x))
            outputs.append(x)
        if self.config.stats_source == "all_blocks":
            x = ops.concat(outputs, axis=-2)
        return self.out_nonlinear(x)

    def forward(self, features: Tensor) -> Tensor:
        """``(B, feat_dim, T)`` features to ``(B, embedding_dim)`` embeddings."""
        if features.shape[-1] < self.min_frames:
            raise InputError(
                f"input has {features.shape[-1]} frames; {self.config.name} needs at least {self.min_frames}"
            )
        return self.head(self.pool(self.frame_level(features)))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


Model = CAMPPlus


def build_model(preset: str | ModelConfig = "campp", seed: int = 0) -> CAMPPlus:
    """Construct a preset and initialise its parameters from ``seed``."""
    config = get_preset(preset) if isinstance(preset, str) else preset
    model = CAMPPlus(config)
    init_parameters(model, seed)
    return model.eval()


def fcm_forward(features: Tensor, model: CAMPPlus) -> Tensor:
    """``(80, T)`` or ``(B, 80, T)`` features through the FCM only."""
    x = features if features.ndim == 3 else ops.reshape(features, (1,) + features.shape)
    out = model.fcm(x)
    return out if features.ndim == 3 else ops.reshape(out, out.shape[1:])


def extract_embedding(features, model: CAMPPlus) -> Tensor:
    """Inference-mode embedding of one utterance's ``(feat_dim, T)`` features."""
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
    if x.ndim != 2 or x.shape[0] != model.config.feat_dim:
        raise InputError(f"expected ({model.config.feat_dim}, T) features, got {x.shape}")
    was_training = model.training
    model.eval()
    try:
        emb = model(ops.reshape(x, (1,) + x.shape))
    finally:
        model.train(was_training)
    return ops.reshape(emb, (emb.shape[-1],))
