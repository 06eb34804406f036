"""
ocunet - Oral cancer segmentation with an attention U-Net on a numpy autodiff core
"""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    OCUNetError,
    ShapeError,
    TrainingError,
)
from .losses import LossConfig, compute_loss
from .manifest import SampleManifest, load_manifest
from .masks import MaskEncoding
from .metrics import MetricReport
from .model import ModelConfig, OCUNet, build_ocunet, forward, param_count
from .tensor import Precision, Tape, Tensor, backward, precision
from .training import TrainingConfig, TrainingResult, evaluate, train

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "Precision",
    "precision",
    "ModelConfig",
    "OCUNet",
    "build_ocunet",
    "forward",
    "param_count",
    "LossConfig",
    "compute_loss",
    "MaskEncoding",
    "SampleManifest",
    "load_manifest",
    "MetricReport",
    "TrainingConfig",
    "TrainingResult",
    "train",
    "evaluate",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "OCUNetError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "TrainingError",
    "CheckpointError",
]
