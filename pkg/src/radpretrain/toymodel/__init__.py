"""Tiny generator/discriminator pair and its training loop."""

from radpretrain.toymodel.model import Discriminator, Generator, TinyEncoder
from radpretrain.toymodel.train import TrainConfig, Trainer, TrainingError, TrainReport, train

__all__ = [
    "Discriminator",
    "Generator",
    "TinyEncoder",
    "TrainConfig",
    "TrainReport",
    "Trainer",
    "TrainingError",
    "train",
]
