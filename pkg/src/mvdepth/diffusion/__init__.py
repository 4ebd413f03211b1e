"""Stage 1: pixel-space multi-view diffusion with a shoebox control branch."""

from .core import MultiViewBatch, Sampler, predict_eps, sample, training_step
from .schedule import DiffusionSchedule, make_schedule, predict_x0, q_sample
from .unet import MultiViewUNet, MVUNetConfig

__all__ = [
    "DiffusionSchedule",
    "MVUNetConfig",
    "MultiViewBatch",
    "MultiViewUNet",
    "Sampler",
    "make_schedule",
    "predict_eps",
    "predict_x0",
    "q_sample",
    "sample",
    "training_step",
]
