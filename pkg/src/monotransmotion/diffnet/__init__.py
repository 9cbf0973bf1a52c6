from . import tensor
from .checkpoint import CheckpointError
from .nn import (
    CapacityError,
    ConfigError,
    OptimizerStateError,
    ParameterStore,
    adam_update,
    clip_grad_norm,
    encoder_forward,
    init_encoder,
    init_linear,
    init_mlp,
    linear,
    mlp_forward,
)
from .tensor import DimensionError, Value, as_value

__all__ = [
    "CapacityError",
    "CheckpointError",
    "ConfigError",
    "DimensionError",
    "OptimizerStateError",
    "ParameterStore",
    "Value",
    "adam_update",
    "as_value",
    "clip_grad_norm",
    "encoder_forward",
    "init_encoder",
    "init_linear",
    "init_mlp",
    "linear",
    "mlp_forward",
    "tensor",
]
