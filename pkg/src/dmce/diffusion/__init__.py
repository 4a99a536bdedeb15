"""Measurement-agnostic diffusion prior: schedule, noise-prediction network, training, checkpoints."""

from .network import Architecture, DenoiserNetwork
from .schedule import NoiseSchedule, forward_sample, linear_schedule
from .training import TrainConfig, reverse_sample, train, train_step

__all__ = ["Architecture", "DenoiserNetwork", "NoiseSchedule", "TrainConfig", "forward_sample",
           "linear_schedule", "reverse_sample", "train", "train_step"]
