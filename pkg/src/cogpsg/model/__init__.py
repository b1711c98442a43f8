from cogpsg.model.architectures import (
    VARIANT_LABELS,
    VARIANT_ORDER,
    CogPSGModel,
    ConvEmbedConfig,
    ModelConfig,
    StreamConfig,
    Variant,
    build_architecture,
    count_parameters,
    forward,
)
from cogpsg.model.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "VARIANT_LABELS",
    "VARIANT_ORDER",
    "CogPSGModel",
    "ConvEmbedConfig",
    "ModelConfig",
    "StreamConfig",
    "Variant",
    "build_architecture",
    "count_parameters",
    "forward",
    "load_checkpoint",
    "save_checkpoint",
]
