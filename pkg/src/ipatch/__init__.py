"""IPatch: patch-level attention fused with intra-patch spectral autocorrelation
for multivariate time-series forecasting."""
from .model import IPatchModel, ModelConfig, build, load_checkpoint, save_checkpoint
from .patching import PatchConfig
from .trainer import TrainConfig, evaluate, train

__all__ = [
    "IPatchModel",
    "ModelConfig",
    "PatchConfig",
    "TrainConfig",
    "build",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
__version__ = "0.1.0"
