"""Training objectives: hinge adversarial losses, L1 reconstruction terms,
and the decaying coarse-path schedule.

Expectations over discriminator score maps are realized as means over cells
and batch, so the loss scale is independent of the score-grid size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .engine import ContractError, Tensor


@dataclass
class LossWeights:
    lambda_i: float = 10.0
    lambda_adv: float = 0.1
    lambda_c: float = 5.0

    def __post_init__(self):
        if min(self.lambda_i, self.lambda_adv, self.lambda_c) < 0:
            raise ContractError("loss weights must be nonnegative")


def composite_output(generated, original, mask):
    """Paste generated hole content into the untouched background:
    mask * generated + (1 - mask) * original, clipped to [-1, 1].

    Works on numpy arrays or on a generated Tensor (stays differentiable).
    Masks broadcast over the channel axis.
    """
    original = np.asarray(original)
    mask = np.asarray(mask)
    if mask.ndim == original.ndim - 1:
        mask = np.expand_dims(mask, -3)
    if mask.shape[-2:] != original.shape[-2:]:
        raise ContractError("mask dims do not match the images")
    m = mask.astype(original.dtype)
    if isinstance(generated, Tensor):
        if generated.data.shape != original.shape:
            raise ContractError("generated dims do not match the original")
        return en.clip_unit(en.add(en.mul(generated, m), original * (1.0 - m)))
    generated = np.asarray(generated)
    if generated.shape != original.shape:
        raise ContractError("generated dims do not match the original")
    return np.clip(m * generated + (1.0 - m) * original, -1.0, 1.0)


def d_hinge_loss(scores_real, scores_fake):
    """mean max(0, 1 - D(real)) + mean max(0, 1 + D(fake))."""
    real = scores_real if isinstance(scores_real, Tensor) else Tensor(np.asarray(scores_real))
    fake = scores_fake if isinstance(scores_fake, Tensor) else Tensor(np.asarray(scores_fake))
    return en.add(en.tmean(en.relu(en.sub(1.0, real))),
                  en.tmean(en.relu(en.add(1.0, fake))))


def g_adv_loss(scores_fake):
    """Negative mean fake score; its gradient pushes every cell upward."""
    fake = scores_fake if isinstance(scores_fake, Tensor) else Tensor(np.asarray(scores_fake))
    return en.neg(en.tmean(fake))


def g_loss(inpaint, target, scores_fake, w):
    """lambda_i * L1(inpaint, target) + lambda_adv * adversarial term."""
    return en.add(en.mul(en.l1_mean(inpaint, target), w.lambda_i),
                  en.mul(g_adv_loss(scores_fake), w.lambda_adv))


def coarse_loss(coarse, target):
    return en.l1_mean(coarse, target)


def total_loss(lg, lc, k, k_max, w):
    """lg + lambda_c * (1 - k/k_max) * lc; the coarse contribution decays to
    exactly zero at the iteration horizon."""
    if k_max <= 0:
        raise ContractError("k_max must be positive")
    if not 0 <= k <= k_max:
        raise ContractError("iteration index outside [0, k_max]")
    factor = w.lambda_c * (1.0 - k / k_max)
    lg = lg if isinstance(lg, Tensor) else Tensor(np.asarray(lg))
    if factor == 0.0:
        return lg
    return en.add(lg, en.mul(lc, factor))
