# codec/losses.py
"""
Функции потерь кодека: реконструкция, KL, focal и dice.
"""
import numpy as np

from numerics import ops
from numerics.tensor import NdTensor

DICE_SMOOTH = 1.0


def mse(pred: NdTensor, target) -> NdTensor:
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def kl_divergence(mean: NdTensor, logvar: NdTensor) -> NdTensor:
    """KL(N(mean, e^logvar) ‖ N(0, 1)), среднее по элементам."""
    terms = ops.sub(ops.add(ops.mul(mean, mean), ops.exp(logvar)), ops.add(logvar, 1.0))
    return ops.mul(ops.mean(terms), 0.5)


def focal_loss(logits: NdTensor, target, alpha: float = 0.25, gamma: float = 2.0) -> NdTensor:
    """
    −α_t (1 − p_t)^γ log p_t, среднее по пикселям.

    p_t = σ(ℓ) для объекта и 1 − σ(ℓ) для фона; α_t = α для объекта, 1 − α для фона.
    log p_t считается как log σ(±ℓ).
    """
    y = np.asarray(target.data if isinstance(target, NdTensor) else target, dtype=logits.dtype)
    sign = 2.0 * y - 1.0
    signed = ops.mul(logits, sign)
    log_pt = ops.log_sigmoid(signed)
    pt = ops.sigmoid(signed)
    modulating = ops.power(ops.sub(1.0, pt), gamma)
    alpha_t = np.where(y > 0.5, alpha, 1.0 - alpha).astype(logits.dtype)
    return ops.neg(ops.mean(ops.mul(ops.mul(modulating, log_pt), alpha_t)))


def dice_loss(probs: NdTensor, target, smooth: float = DICE_SMOOTH) -> NdTensor:
    """
    1 − (2|P∩G| + s)/(|P| + |G| + s) по мягким вероятностям, среднее по кадрам.

    Args:
        probs: вероятности (N, H, W)
        target: бинарная маска (N, H, W)
    """
    y = np.asarray(target.data if isinstance(target, NdTensor) else target, dtype=probs.dtype)
    axes = (-2, -1)
    intersection = ops.sum(ops.mul(probs, y), axis=axes)
    total = ops.add(ops.sum(probs, axis=axes), y.sum(axis=axes))
    ratio = ops.div(ops.add(ops.mul(intersection, 2.0), smooth), ops.add(total, smooth))
    return ops.mean(ops.sub(1.0, ratio))
