from .layers import (
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool2d,
    ReLU,
    Reshape,
    Sigmoid,
    Upsample2d,
    build_layer,
)
from .losses import l1_loss, mse_loss, softmax, softmax_cross_entropy
from .network import Network, Tape, TapeEntry, build_network
from .optim import AdamState, adam_step

__all__ = [
    "Conv2d",
    "Dense",
    "Flatten",
    "Layer",
    "MaxPool2d",
    "ReLU",
    "Reshape",
    "Sigmoid",
    "Upsample2d",
    "build_layer",
    "build_network",
    "Network",
    "Tape",
    "TapeEntry",
    "AdamState",
    "adam_step",
    "l1_loss",
    "mse_loss",
    "softmax",
    "softmax_cross_entropy",
]
