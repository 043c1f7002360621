"""Infrared/visible image fusion with a learned two-scale (base/detail) decomposition."""

from .autodiff import Tape, Tensor
from .fusion import FusionConfig, fuse_features
from .losses import LossConfig, total_loss
from .metrics import MetricReport, evaluate_all
from .network import FeaturePair, NetworkParams, decode, encode, init_params, reconstruct

__all__ = [
    "FeaturePair",
    "FusionConfig",
    "LossConfig",
    "MetricReport",
    "NetworkParams",
    "Tape",
    "Tensor",
    "decode",
    "encode",
    "evaluate_all",
    "fuse_features",
    "init_params",
    "reconstruct",
    "total_loss",
]

__version__ = "0.1.0"
