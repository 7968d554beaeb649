"""Waveform regression network: layers, training and checkpoints."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .network import Network, NetworkConfig, Sequential, build_network, mse_loss
from .optim import Adadelta, PlateauScheduler
from .train import ArrayDataset, TrainRecord, TrainResult, train

__all__ = [
    "Adadelta",
    "ArrayDataset",
    "Network",
    "NetworkConfig",
    "PlateauScheduler",
    "Sequential",
    "TrainRecord",
    "TrainResult",
    "build_network",
    "load_checkpoint",
    "mse_loss",
    "read_checkpoint",
    "save_checkpoint",
    "train",
]
