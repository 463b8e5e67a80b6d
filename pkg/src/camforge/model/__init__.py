"""CAM++ architecture: front-end convolution module, dense TDNN backbone, masking."""

from camforge.core.ops import global_avg_pool, segment_avg_pool, stats_pool
from camforge.model.campp import CAMPPlus, Model, build_model, extract_embedding, fcm_forward
from camforge.model.config import (
    REFERENCE_PARAMS_M,
    PRESETS,
    ModelConfig,
    dumps_config,
    get_preset,
    load_config,
    loads_config,
    save_config,
)
from camforge.model.layers import CamModule, DTdnnLayer, cam_mask, dtdnn_layer_forward
from camforge.model.weights import (
    load_weights,
    read_tensor_records,
    save_weights,
    write_tensor_records,
)

__all__ = [
    "global_avg_pool",
    "segment_avg_pool",
    "stats_pool",
    "CAMPPlus",
    "Model",
    "build_model",
    "extract_embedding",
    "fcm_forward",
    "REFERENCE_PARAMS_M",
    "PRESETS",
    "ModelConfig",
    "dumps_config",
    "get_preset",
    "load_config",
    "loads_config",
    "save_config",
    "CamModule",
    "DTdnnLayer",
    "cam_mask",
    "dtdnn_layer_forward",
    "load_weights",
    "read_tensor_records",
    "save_weights",
    "write_tensor_records",
]
