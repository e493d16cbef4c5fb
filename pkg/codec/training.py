# codec/training.py
"""
Обучение кодека: предобучение на видео и адаптация декодера к маскам.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import RunConfig
from constants import BINARIZE_THRESHOLD, DECODER_STRATEGIES, STRATEGY_CONV_HEAD, STRATEGY_FROZEN
from codec.losses import dice_loss, focal_loss, kl_divergence, mse
from codec.model import (
    CodecParams,
    decode,
    decode_logits,
    decode_rgb_logits,
    encode,
    init_codec,
    init_head,
    init_mask_decoder,
    latent_statistics,
)
from errors import ContractError, TrainingDivergedError
from numerics import ops
from numerics.layers import freeze, merge, unfreeze, with_prefix
from numerics.optim import adamw_step, grads_by_name, init_optim_state
from numerics.tensor import NdTensor, backward, new_tape, no_grad
from utils.progress import progress_bar
from utils.seeding import rng_for

logger = logging.getLogger(__name__)

ENCODE_CHUNK = 256


@dataclass
class CodecTrainingResult:
    """Итог этапа: кодек, потери по шагам и средние по эпохам."""

    codec: CodecParams
    step_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)


def _frames(clips: np.ndarray, trailing: int) -> np.ndarray:
    clips = np.asarray(clips)
    return clips.reshape((-1,) + clips.shape[clips.ndim - trailing:])


def encode_means(clips: np.ndarray, codec: CodecParams, chunk: int = ENCODE_CHUNK) -> np.ndarray:
    """Средние апостериорного распределения для видео (..., H, W, 3) или масок (..., H, W)."""
    clips = np.asarray(clips)
    trailing = 3 if clips.shape[-1] == 3 and clips.dtype != np.uint8 else 2
    lead = clips.shape[:clips.ndim - trailing]
    frames = _frames(clips, trailing)
    out = []
    with no_grad():
        for start in range(0, len(frames), chunk):
            mean, _ = encode(frames[start:start + chunk], codec)
            out.append(mean.data)
    means = np.concatenate(out, axis=0)
    return means.reshape(lead + means.shape[1:])


def _check_loss(value: float, step: int, lr: float, history: List[float]) -> None:
    if not math.isfinite(value):
        logger.error(f"[CODEC] ❌ Нечисловая потеря на шаге {step}")
        raise TrainingDivergedError(step, lr, history)


def pretrain_codec(videos: np.ndarray, config: RunConfig) -> CodecTrainingResult:
    """
    Совместное обучение кодера и декодера: MSE реконструкции + β·KL.

    После обучения считаются константы нормализации по средним латентов
    обучающих видео, кодер замораживается.

    Args:
        videos: N×T×H×W×3 в [0, 1]
        config: параметры запуска (codec_*, kl_weight, seed)

    Raises:
        ContractError: пустой набор
        TrainingDivergedError: нечисловая потеря
    """
    videos = np.asarray(videos, dtype=np.float32)
    if videos.size == 0 or len(videos) == 0:
        raise ContractError("pretrain_codec: empty dataset")
    frames = _frames(videos, 3)
    codec = init_codec(config.seed, config.latent_channels, config.codec_width, config.head_channels)
    params = merge(codec.encoder, codec.decoder)
    optim = init_optim_state(params, lr=config.codec_lr, weight_decay=config.weight_decay,
                             betas=(config.beta1, config.beta2), eps=config.adam_eps)
    result = CodecTrainingResult(codec)
    batch = config.codec_batch
    steps_per_epoch = math.ceil(len(frames) / batch)
    logger.info(f"[CODEC] 🔄 Предобучение: {len(frames)} кадров, {config.codec_epochs} эпох, "
                f"{steps_per_epoch} шагов/эпоха")

    step = 0
    for epoch in range(config.codec_epochs):
        order = rng_for(config.seed, "codec-epoch", epoch).permutation(len(frames))
        recon_sum = 0.0
        for start in progress_bar(range(0, len(frames), batch), f"codec {epoch + 1}/{config.codec_epochs}",
                                  total=steps_per_epoch):
            x = frames[order[start:start + batch]]
            rng = rng_for(config.seed, "codec-noise", step)
            view = replace(codec, encoder=with_prefix(params, "enc."), decoder=with_prefix(params, "dec."))
            with new_tape():
                mean, logvar = encode(x, view)
                eps = rng.standard_normal(mean.dims).astype(mean.dtype)
                z = ops.add(mean, ops.mul(ops.exp(ops.mul(logvar, 0.5)), eps))
                recon = mse(ops.sigmoid(decode_rgb_logits(z, view)), x)
                loss = ops.add(recon, ops.mul(kl_divergence(mean, logvar), config.kl_weight))
                grads = backward(loss)
            value = loss.item()
            result.step_losses.append(value)
            _check_loss(value, step, optim.lr, result.step_losses)
            params, optim = adamw_step(params, grads_by_name(params, grads), optim)
            recon_sum += recon.item() * len(x)
            step += 1
            if step % config.log_every == 0:
                logger.info(f"[CODEC] шаг {step}: loss {value:.5f}")
        epoch_recon = recon_sum / len(frames)
        result.epoch_losses.append(epoch_recon)
        logger.info(f"[CODEC] ✅ Эпоха {epoch + 1}: recon MSE {epoch_recon:.5f}")

    codec = replace(codec, encoder=freeze(with_prefix(params, "enc.")), decoder=freeze(with_prefix(params, "dec.")))
    mu, sigma = latent_statistics(encode_means(videos, codec))
    codec = replace(codec, mu=mu, sigma=sigma)
    logger.info(f"[CODEC] ✓ Константы нормализации: {len(mu)} каналов, кодер заморожен")
    result.codec = codec
    return result


def finetune_decoder(codec: CodecParams, masks: np.ndarray, strategy: str, config: RunConfig) -> CodecTrainingResult:
    """
    Адаптация декодера к маскам: focal(α, γ) + dice для decode(encode-mean(mask)).

    Обучается только подмножество стратегии: conv-head - голова,
    finetuned - копия декодера с одноканальным выходом. Кодер не меняется.

    Args:
        codec: предобученный кодек
        masks: N×T×H×W бинарные маски
        strategy: conv-head | finetuned

    Raises:
        ContractError: стратегия frozen (нечего обучать) или неизвестная
    """
    if strategy == STRATEGY_FROZEN:
        raise ContractError("finetune_decoder: the frozen strategy has no trainable parameters")
    if strategy not in DECODER_STRATEGIES:
        raise ContractError(f"finetune_decoder: unknown strategy {strategy!r}")
    masks = np.asarray(masks)
    if masks.size == 0:
        raise ContractError("finetune_decoder: empty dataset")

    latents = _frames(encode_means(masks, codec), 3)
    targets = (_frames(masks, 2) > 0).astype(np.float32)
    rng = rng_for(config.seed, "decoder-init", strategy)
    if strategy == STRATEGY_CONV_HEAD:
        base = codec.head if codec.head is not None else init_head(rng, config.head_channels)
    else:
        base = codec.finetuned if codec.finetuned is not None else init_mask_decoder(codec.decoder)
    params = unfreeze(base)
    optim = init_optim_state(params, lr=config.decoder_lr, weight_decay=config.weight_decay,
                             betas=(config.beta1, config.beta2), eps=config.adam_eps)
    result = CodecTrainingResult(codec)
    batch = config.codec_batch
    steps_per_epoch = math.ceil(len(latents) / batch)
    logger.info(f"[CODEC] 🔄 Адаптация декодера ({strategy}): {len(latents)} кадров, {config.decoder_epochs} эпох")

    step = 0
    for epoch in range(config.decoder_epochs):
        order = rng_for(config.seed, "decoder-epoch", strategy, epoch).permutation(len(latents))
        total = 0.0
        for start in progress_bar(range(0, len(latents), batch), f"decoder {epoch + 1}/{config.decoder_epochs}",
                                  total=steps_per_epoch):
            idx = order[start:start + batch]
            y = targets[idx]
            with new_tape():
                logits = decode_logits(latents[idx], codec, strategy, overrides=params)
                loss = ops.add(
                    focal_loss(logits, y, config.focal_alpha, config.focal_gamma),
                    dice_loss(ops.sigmoid(logits), y),
                )
                grads = backward(loss)
            value = loss.item()
            result.step_losses.append(value)
            _check_loss(value, step, optim.lr, result.step_losses)
            params, optim = adamw_step(params, grads_by_name(params, grads), optim)
            total += value * len(idx)
            step += 1
            if step % config.log_every == 0:
                logger.info(f"[CODEC] шаг {step}: focal+dice {value:.5f}")
        result.epoch_losses.append(total / len(latents))
        logger.info(f"[CODEC] ✅ Эпоха {epoch + 1}: focal+dice {result.epoch_losses[-1]:.5f}")

    trained = freeze(params)
    if strategy == STRATEGY_CONV_HEAD:
        result.codec = replace(codec, head=trained)
    else:
        result.codec = replace(codec, finetuned=trained)
    return result


def reconstruct_masks(codec: CodecParams, masks: np.ndarray, strategy: str,
                      chunk: int = ENCODE_CHUNK) -> np.ndarray:
    """decode(encode-mean(mask)) → бинарные маски той же формы (uint8)."""
    masks = np.asarray(masks)
    latents = encode_means(masks, codec)
    flat = _frames(latents, 3)
    out = []
    with no_grad():
        for start in range(0, len(flat), chunk):
            out.append(decode(flat[start:start + chunk], codec, strategy).data)
    probs = np.concatenate(out, axis=0).reshape(masks.shape)
    return (probs >= BINARIZE_THRESHOLD).astype(np.uint8)


def reconstruction_report(codec: CodecParams, masks: Sequence[np.ndarray],
                          strategies: Optional[Sequence[str]] = None,
                          aggregation: str = "clip") -> Dict[str, "EvalResult"]:
    """
    J, F и J&F реконструкции масок для каждой доступной стратегии декодера.

    Args:
        masks: клипы T×H×W
        strategies: по умолчанию все обученные стратегии кодека
    """
    from metrics import evaluate_split

    stacked = np.stack([np.asarray(m) for m in masks])
    report = {}
    for strategy in strategies or codec.strategies():
        recon = reconstruct_masks(codec, stacked, strategy)
        report[strategy] = evaluate_split(list(recon), list(stacked), aggregation=aggregation)
        logger.info(f"[CODEC] {strategy}: reconstruction J&F {report[strategy].mean_jf:.4f}")
    return report
