"""Unsupervised correlation-filter tracking: label-free training through
forward-backward trajectory consistency, a real-time tracker, and one-pass
evaluation tooling."""

from .imgproc import BBox
from .network import NetParams, init_params, load_model, save_model
from .tracker import TrackerConfig, init, run_sequence, step
from .training import TrainConfig, TrajectorySample, train

__all__ = [
    "BBox",
    "NetParams",
    "TrackerConfig",
    "TrainConfig",
    "TrajectorySample",
    "init",
    "init_params",
    "load_model",
    "run_sequence",
    "save_model",
    "step",
    "train",
]

__version__ = "0.1.0"
