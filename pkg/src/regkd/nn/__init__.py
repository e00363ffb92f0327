"""Minimal dense-network engine: layers, network, Adam, LR schedule, checkpoints."""

from .checkpoint import FORMAT_TAG, FORMAT_VERSION, load_checkpoint, save_checkpoint
from .layers import BatchNorm, Dense, Dropout, Layer, ReLU
from .network import Network
from .optim import Adam, LrSchedule

__all__ = [
    "Adam",
    "BatchNorm",
    "Dense",
    "Dropout",
    "FORMAT_TAG",
    "FORMAT_VERSION",
    "Layer",
    "LrSchedule",
    "Network",
    "ReLU",
    "load_checkpoint",
    "save_checkpoint",
]
