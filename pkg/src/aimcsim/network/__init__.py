"""Toy segmentation networks with digital/analog forward passes and HWA training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import (
    ProgrammedNetwork,
    TrainConfig,
    TrainHistory,
    forward,
    hwa_train,
    loss_and_grads,
    program_network,
    train_step,
)
from .graph import NetworkSpec, Node
from .presets import PRESETS, build_preset


def param_count(net: NetworkSpec) -> int:
    """Total number of weight and bias elements."""
    return net.param_count()


__all__ = [
    "NetworkSpec", "Node", "PRESETS", "ProgrammedNetwork", "TrainConfig", "TrainHistory",
    "build_preset", "forward", "hwa_train", "load_checkpoint", "loss_and_grads",
    "param_count", "program_network", "save_checkpoint", "train_step",
]
