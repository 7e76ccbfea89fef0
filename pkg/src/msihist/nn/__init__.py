"""Differentiable tensor engine and the image translation models."""

from .tensor import Tensor
from .ops import (
    conv2d,
    conv_transpose2d,
    relu,
    leaky_relu,
    sigmoid,
    tanh,
    instance_norm,
    max_pool2d,
    concat,
    mse_loss,
    l1_loss,
    bce_with_logits_loss,
)
from .models import UNet, UNetConfig, PatchGAN, Pix2PixConfig
from .optim import TrainState, adam_step
from .checkpoint import save_checkpoint, load_checkpoint, restore_state
from .train_ops import unet_train_step, pix2pix_step

__all__ = [
    "Tensor",
    "conv2d",
    "conv_transpose2d",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "instance_norm",
    "max_pool2d",
    "concat",
    "mse_loss",
    "l1_loss",
    "bce_with_logits_loss",
    "UNet",
    "UNetConfig",
    "PatchGAN",
    "Pix2PixConfig",
    "TrainState",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "restore_state",
    "unet_train_step",
    "pix2pix_step",
]
