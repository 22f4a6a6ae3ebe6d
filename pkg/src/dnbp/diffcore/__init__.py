"""Autodiff plumbing: layers, gradient gates, Adam, checkpoints, gradient checks."""
from dnbp.diffcore.adam import AdamState, adam_step, global_grad_norm
from dnbp.diffcore.checkpoint import load_checkpoint, save_checkpoint
from dnbp.diffcore.layers import (
    DENSITY_FLOOR,
    IMAGE_SIZE,
    MLP,
    ConvEncoder,
    ScaledSigmoid,
    check_finite,
    gaussian_density,
    log_gaussian_density,
)
from dnbp.diffcore.tape import Tape, frozen_call

__all__ = [
    "AdamState", "adam_step", "global_grad_norm", "load_checkpoint", "save_checkpoint",
    "DENSITY_FLOOR", "IMAGE_SIZE", "MLP", "ConvEncoder", "ScaledSigmoid", "check_finite",
    "gaussian_density", "log_gaussian_density", "Tape", "frozen_call",
]
