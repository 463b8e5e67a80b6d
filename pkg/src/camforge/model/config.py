"""Architecture presets and their flat ``key = value`` text serialisation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from camforge.errors import ConfigurationError, ParseError


@dataclass(frozen=True)
class ModelConfig:
    """Declarative description of one CAM++ / D-TDNN variant.

    Widths not fixed by the architecture description (input TDNN
    width/kernel, bottleneck, dilations, CAM hidden width) carry values
    calibrated against the reference parameter totals.
    """

    name: str = "campp"
    feat_dim: int = 80
    # front-end convolution module
    fcm_enabled: bool = True
    fcm_channels: int = 32
    fcm_freq_strides: tuple[int, ...] = (1, 2, 2, 2)
    fcm_kernel: int = 3
    # input TDNN
    input_channels: int = 128
    input_kernel: int = 5
    input_stride: int = 2
    # dense TDNN blocks
    block_layers: tuple[int, ...] = (12, 24, 16)
    growth_rate: int = 32
    bottleneck_channels: int = 128
    block_kernel: int = 3
    block_dilations: tuple[int, ...] = (1, 2, 2)
    transition_compression: float = 0.5
    # context-aware masking
    cam_enabled: bool = True
    cam_hidden: int = 64
    segment_pooling: bool = True
    segment_length: int = 100
    # head
    stats_source: str = "last"
    embedding_dim: int = 512
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.feat_dim < 1:
            raise ConfigurationError("feat_dim must be >= 1")
        if self.fcm_enabled:
            down = math.prod(self.fcm_freq_strides)
            if self.feat_dim % down:
                raise ConfigurationError(
                    f"feat_dim {self.feat_dim} not divisible by FCM downsampling {down}"
                )
        if len(self.block_dilations) != len(self.block_layers):
            raise ConfigurationError("block_dilations needs one entry per block")
        if not self.block_layers or min(self.block_layers) < 1:
            raise ConfigurationError("every block needs at least one layer")
        if not 0 < self.transition_compression <= 1:
            raise ConfigurationError("transition_compression must lie in (0, 1]")
        if self.segment_length < 1:
            raise ConfigurationError("segment_length must be >= 1")
        if self.stats_source not in ("last", "all_blocks"):
            raise ConfigurationError("stats_source must be 'last' or 'all_blocks'")
        for key in ("growth_rate", "bottleneck_channels", "input_channels", "embedding_dim",
                    "cam_hidden", "input_stride", "block_kernel", "input_kernel"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{key} must be >= 1")

    @property
    def fcm_out_channels(self) -> int:
        return self.fcm_channels * (self.feat_dim // math.prod(self.fcm_freq_strides))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, ModelConfig] = {
    "campp": ModelConfig(),
    "campp_no_masking": ModelConfig(name="campp_no_masking", cam_enabled=False),
    "campp_no_fcm": ModelConfig(name="campp_no_fcm", fcm_enabled=False),
    "dtdnn_vanilla": ModelConfig(
        name="dtdnn_vanilla",
        fcm_enabled=False,
        input_stride=1,
        block_layers=(6, 12),
        growth_rate=64,
        bottleneck_channels=128,
        block_dilations=(1, 3),
        cam_enabled=False,
    ),
    "dtdnn_l": ModelConfig(name="dtdnn_l", fcm_enabled=False, cam_enabled=False),
    "dtdnn_cam_gp": ModelConfig(
        name="dtdnn_cam_gp",
        fcm_enabled=False,
        input_stride=1,
        block_layers=(6, 12),
        growth_rate=64,
        block_dilations=(1, 3),
        segment_pooling=False,
    ),
    "dtdnn_cam_gp_sp": ModelConfig(
        name="dtdnn_cam_gp_sp",
        fcm_enabled=False,
        input_stride=1,
        block_layers=(6, 12),
        growth_rate=64,
        block_dilations=(1, 3),
    ),
    # desk-scale network for the overfit harness
    "tiny": ModelConfig(
        name="tiny",
        fcm_channels=4,
        input_channels=32,
        block_layers=(2, 2),
        growth_rate=8,
        bottleneck_channels=16,
        block_dilations=(1, 2),
        cam_hidden=8,
        segment_length=20,
        embedding_dim=32,
    ),
}

# Parameter totals (millions) published for the presets that have one.
REFERENCE_PARAMS_M = {
    "campp": 7.18,
    "campp_no_masking": 6.64,
    "campp_no_fcm": 6.94,
    "dtdnn_vanilla": 2.85,
    "dtdnn_l": 6.40,
    "dtdnn_cam_gp": 3.07,
    "dtdnn_cam_gp_sp": 3.07,
}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _parse_value(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if str(typ).startswith("tuple"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ParseError(f"bad value for {key}: {raw!r}") from None


def dumps_config(config: ModelConfig) -> str:
    lines = ["# camforge model configuration"]
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def loads_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    """Parse ``key = value`` lines; unspecified keys come from ``base``.

    A ``preset = <name>`` line selects the base when given.
    """
    types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    values: dict = {}
    preset = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            preset = raw
            continue
        if key not in types:
            raise ParseError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, types[key], key)
    if base is None:
        base = get_preset(preset) if preset else ModelConfig()
    return dataclasses.replace(base, **values)


def save_config(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_config(config))


def load_config(path: str | Path, base: ModelConfig | None = None) -> ModelConfig:
    return loads_config(Path(path).read_text(), base)
