"""Residual-in-residual dense network for component-wise system-matrix super-resolution."""

from .model import ModelCheckpoint, ModelConfig, SMRNet, build_model, init_parameters
from .train import ORIENTATIONS, TrainConfig, TrainResult, encode_pair, orient, recover, split_components, train

__all__ = [
    "ORIENTATIONS",
    "ModelCheckpoint",
    "ModelConfig",
    "SMRNet",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "encode_pair",
    "init_parameters",
    "orient",
    "recover",
    "split_components",
    "train",
]
