"""Dense-tensor neural-network engine for the evolved highway networks."""

from .model import Model, build_network, load_model, save_model
from .ops import HighwayLayerParams, TrainingDiverged
from .optim import Adam
from .train import TrainedMetrics, evaluate, train

__all__ = [
    "Adam",
    "HighwayLayerParams",
    "Model",
    "TrainedMetrics",
    "TrainingDiverged",
    "build_network",
    "evaluate",
    "load_model",
    "save_model",
    "train",
]
