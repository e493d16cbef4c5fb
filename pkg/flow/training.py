# flow/training.py
"""
Обучение поля скорости (flow matching, MSE) и цикл эпох с чекпоинтами.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from codec.losses import mse
from codec.model import CodecParams
from config import RunConfig, echo_config
from constants import FLOW_CHECKPOINT, FLOW_EPOCH_TEMPLATE, LOSS_LOG, PARADIGM_ONESTEP_MASK
from errors import TrainingDivergedError
from flow.engine import FlowBatch, FlowConfig, LatentCache, NetField, infer_batch, interpolate_state, make_batch, net_input
from metrics import evaluate_split
from numerics.optim import OptimState, adamw_step, global_grad_norm, grads_by_name, init_optim_state, learning_rate
from numerics.tensor import backward, new_tape
from shapes.dataset import Sample, paired_indices
from storage.loss_log import read_loss_log, write_loss_log
from storage.checkpoints import FlowCheckpoint, load_flow_checkpoint, save_flow_checkpoint
from utils.progress import progress_bar
from utils.seeding import derive_seed, rng_for
from velocity_net import NetConfig, init_params

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def flow_targets(batch: FlowBatch, config: FlowConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (вход сети, время, цель) по парадигме.

    flow: вход in(z_t), цель z1 − start; onestep-velocity: вход in(z0), t = 0,
    цель z1 − z0; onestep-mask: то же, цель z1.
    """
    if config.is_flow:
        state = interpolate_state(batch.start, batch.z1, batch.t)
        target = batch.z1 - batch.start
        t = batch.t
    else:
        state = batch.z0
        t = np.zeros(len(batch))
        target = batch.z1 if config.paradigm == PARADIGM_ONESTEP_MASK else batch.z1 - batch.z0
    return net_input(state, batch.z0, config.dvi), t, target


def train_step(batch: FlowBatch, net, optim: Optional[OptimState], config: FlowConfig, lr: float,
               step: int = 0, history: Optional[List[float]] = None):
    """
    Одно обновление: MSE между выходом поля и целью парадигмы, затем AdamW.

    Args:
        net: поле скорости (NetField или OracleField); у оракула нет параметров,
            обновление пропускается
        history: потери предыдущих шагов (для диагностики расхождения)

    Returns:
        (потеря, поле с обновлёнными параметрами)

    Raises:
        TrainingDivergedError: нечисловая потеря или норма градиента
    """
    z_in, t, target = flow_targets(batch, config)
    with new_tape():
        pred = net(z_in, batch.token_ids, t)
        loss = mse(pred, target)
        grads = backward(loss)
    value = loss.item()
    if not math.isfinite(value):
        history = list(history or []) + [value]
        logger.error(f"[FLOW] ❌ Нечисловая потеря на шаге {step} (lr {lr:g})")
        raise TrainingDivergedError(step, lr, history)
    if net.params and optim is not None:
        named = grads_by_name(net.params, grads)
        norm = global_grad_norm(named)
        if not math.isfinite(norm):
            history = list(history or []) + [value]
            logger.error(f"[FLOW] ❌ Нечисловая норма градиента на шаге {step} (lr {lr:g})")
            raise TrainingDivergedError(step, lr, history)
        params, optim = adamw_step(net.params, named, optim, lr=lr)
        net = net.with_params(params)
    return value, net


# ============================================================================
# Цикл обучения
# ============================================================================

@dataclass
class FlowTrainingResult:
    net: NetField
    step_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    val_scores: List[float] = field(default_factory=list)
    step: int = 0
    checkpoint: Optional[Path] = None


def _resume(run_dir: Path) -> Optional[FlowCheckpoint]:
    path = run_dir / FLOW_CHECKPOINT
    if not path.exists():
        return None
    checkpoint = load_flow_checkpoint(path, trainable=True)
    if checkpoint.optim is None:
        return None
    logger.info(f"[FLOW] 🔄 Продолжение с эпохи {checkpoint.epoch}, шаг {checkpoint.step}: {path}")
    return checkpoint


def train_flow(train_samples: Sequence[Sample], codec: CodecParams, config: RunConfig,
               run_dir: Optional[PathLike] = None, val_samples: Optional[Sequence[Sample]] = None,
               resume: bool = True) -> FlowTrainingResult:
    """
    Обучение поля скорости на выборках train_samples.

    Каждая эпоха - перестановка из потока (seed, "epoch", e); пакет шага s
    собирается с генератором (seed, "batch", s), так что обучение воспроизводимо
    и продолжение с чекпоинта эпохи совпадает с непрерывным запуском.

    Args:
        run_dir: каталог запуска; если задан, в конце каждой эпохи пишутся
            loss.log, flow_epoch_XXX.frvs и flow.frvs
        val_samples: если заданы, J&F валидации логируется после каждой эпохи
        resume: продолжить с flow.frvs каталога запуска

    Raises:
        ContractError: несогласованная конфигурация (noise2mask без DVI)
        TrainingDivergedError: нечисловая потеря
    """
    flow_config = FlowConfig.from_run_config(config)
    net_config = NetConfig.from_run_config(config)
    run_dir = Path(run_dir) if run_dir is not None else None
    params = init_params(net_config, derive_seed(config.seed, "net"))
    optim = init_optim_state(params, lr=config.lr, weight_decay=config.weight_decay,
                             betas=(config.beta1, config.beta2), eps=config.adam_eps)
    step, first_epoch = 0, 0
    losses: List[Tuple[int, float]] = []
    checkpoint_path: Optional[Path] = None

    if run_dir is not None:
        echo_config(config, run_dir)
        checkpoint = _resume(run_dir) if resume else None
        if checkpoint is not None:
            params, optim = checkpoint.params, checkpoint.optim
            step, first_epoch = checkpoint.step, checkpoint.epoch
            losses = [(s, v) for s, v in read_loss_log(run_dir / LOSS_LOG) if s < step]
            checkpoint_path = run_dir / FLOW_CHECKPOINT

    net = NetField(params, net_config)
    result = FlowTrainingResult(net, step_losses=[v for _, v in losses], step=step, checkpoint=checkpoint_path)
    cache = LatentCache(codec)
    n = len(train_samples)
    batch_size = flow_config.batch_size
    steps_per_epoch = math.ceil(n / batch_size)
    logger.info(f"[FLOW] 🔄 {flow_config.paradigm}: {n} выборок, эпохи {first_epoch + 1}..{config.epochs}, "
                f"p_bbs={flow_config.p_bbs} spa={flow_config.spa} dvi={flow_config.dvi}")

    for epoch in range(first_epoch, config.epochs):
        order = rng_for(config.seed, "epoch", epoch).permutation(n)
        total = 0.0
        for start in progress_bar(range(0, n, batch_size), f"flow {epoch + 1}/{config.epochs}", total=steps_per_epoch):
            chunk = [train_samples[i] for i in order[start:start + batch_size]]
            batch = make_batch(chunk, codec, flow_config, rng_for(config.seed, "batch", step), cache)
            lr = learning_rate(config.lr, step, config.warmup_steps)
            value, net = train_step(batch, net, optim, flow_config, lr, step, result.step_losses)
            losses.append((step, value))
            result.step_losses.append(value)
            total += value * len(chunk)
            step += 1
            if step % config.log_every == 0:
                logger.info(f"[FLOW] шаг {step}: loss {value:.5f}")
        result.epoch_losses.append(total / n)
        logger.info(f"[FLOW] ✅ Эпоха {epoch + 1}: loss {result.epoch_losses[-1]:.5f}")

        if val_samples:
            predictions = infer_batch(val_samples, net, codec, flow_config)
            scores = evaluate_split([p.mask for p in predictions], [s.mask for s in val_samples],
                                    pairs=paired_indices(list(val_samples)), aggregation=config.jaccard_aggregation)
            result.val_scores.append(scores.mean_jf)

        if run_dir is not None:
            write_loss_log(run_dir / LOSS_LOG, losses)
            checkpoint = FlowCheckpoint(net.params, codec, config, optim, step, epoch + 1)
            save_flow_checkpoint(run_dir / FLOW_EPOCH_TEMPLATE.format(epoch=epoch + 1), checkpoint)
            result.checkpoint = save_flow_checkpoint(run_dir / FLOW_CHECKPOINT, checkpoint)
            logger.info(f"[FLOW] ✓ Чекпоинт эпохи {epoch + 1}: {result.checkpoint}")

    result.net = net
    result.step = step
    return result
