"""Minimal differentiable toolkit (numpy, manual backward passes)."""

from .checkpoint import (CheckpointError, assign_params, decode_checkpoint, encode_checkpoint,
                         load_checkpoint, save_checkpoint)
from .core import Layer, Sequential, ShapeError, Tensor
from .gradcheck import GradientCheckError, GradientReport, gradient_check
from .layers import (Concat, Conv2D, ConvTranspose2D, Dense, GlobalAvgPool, PowerNormalize, PReLU,
                     ReLU, Sigmoid, same_padding)
from .loss import mse_loss
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "CheckpointError", "Concat", "Conv2D", "ConvTranspose2D", "Dense",
    "GlobalAvgPool", "GradientCheckError", "GradientReport", "Layer", "PowerNormalize", "PReLU",
    "ReLU", "Sequential", "ShapeError", "Sigmoid", "Tensor", "adam_step", "assign_params",
    "decode_checkpoint", "encode_checkpoint", "gradient_check", "load_checkpoint", "mse_loss",
    "same_padding", "save_checkpoint",
]
