"""Single training steps for the two models.

These are deterministic given the batch and the optimizer state; epoch
ordering and stopping rules live in the pipeline layer.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .models import PatchGAN, Pix2PixConfig, UNet
from .optim import TrainState, adam_step


def unet_train_step(model: UNet, state: TrainState, x: np.ndarray, y: np.ndarray,
                    lr: float, betas: tuple[float, float] = (0.9, 0.999)) -> float:
    """One MSE/Adam update on a batch; returns the batch loss."""
    model.zero_grad()
    pred = model.forward(x)
    loss = ops.mse_loss(pred, y)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss at step {state.step}")
    loss.backward()
    adam_step(state, lr, betas[0], betas[1])
    return value


def pix2pix_step(gen: UNet, disc: PatchGAN, gen_state: TrainState,
                 disc_state: TrainState, condition: np.ndarray, target: np.ndarray,
                 cfg: Pix2PixConfig) -> dict[str, float]:
    """One discriminator update then one generator update.

    Discriminator: BCE-with-logits on (condition, target) labeled 1 and on
    (condition, generated) labeled 0, averaged (halved, so D and G losses
    share a scale). Generator: BCE toward label 1 on its output plus
    lambda_l1 times the L1 distance to the target.
    """
    b1, b2 = cfg.betas

    # Discriminator sees the generator output as a constant.
    fake = gen.forward(condition).detach()
    disc.zero_grad()
    logit_real = disc.forward(condition, target)
    logit_fake = disc.forward(condition, fake)
    loss_real = ops.bce_with_logits_loss(logit_real, np.ones(logit_real.shape))
    loss_fake = ops.bce_with_logits_loss(logit_fake, np.zeros(logit_fake.shape))
    loss_d = (loss_real + loss_fake) * 0.5
    d_value = loss_d.item()
    if not np.isfinite(d_value):
        raise FloatingPointError(f"non-finite discriminator loss at step {disc_state.step}")
    loss_d.backward()
    adam_step(disc_state, cfg.lr, b1, b2)

    # Generator update; discriminator gradients from this pass are discarded.
    gen.zero_grad()
    disc.zero_grad()
    fake = gen.forward(condition)
    logit = disc.forward(condition, fake)
    loss_adv = ops.bce_with_logits_loss(logit, np.ones(logit.shape))
    loss_l1 = ops.l1_loss(fake, target)
    loss_g = loss_adv + cfg.lambda_l1 * loss_l1
    g_value = loss_g.item()
    if not np.isfinite(g_value):
        raise FloatingPointError(f"non-finite generator loss at step {gen_state.step}")
    loss_g.backward()
    adam_step(gen_state, cfg.lr, b1, b2)

    return {
        "loss_d": d_value,
        "loss_g": g_value,
        "loss_g_adv": loss_adv.item(),
        "loss_g_l1": loss_l1.item(),
    }
