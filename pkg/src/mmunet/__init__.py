"""MM-UNet in numpy: a small autodiff core, MLP-Mixer blocks, multi-scale local
token mixing, UNet variants, desk-scale training and phantom data."""

from .errors import ConfigError, DataError, FormatError, MMUNetError, ShapeError, UsageError
from .models import ModelSpec, build, count_params, forward
from .training import TrainConfig, evaluate, lr_at, train

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "MMUNetError",
    "ModelSpec",
    "ShapeError",
    "TrainConfig",
    "UsageError",
    "build",
    "count_params",
    "evaluate",
    "forward",
    "lr_at",
    "train",
]
