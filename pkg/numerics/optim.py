# numerics/optim.py
"""
Оптимизатор AdamW (развязанное затухание весов, поправка смещения моментов).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from errors import ContractError
from numerics.tensor import GradMap, NdTensor

logger = logging.getLogger(__name__)

ParamDict = Dict[str, NdTensor]


@dataclass
class OptimState:
    """
    Состояние AdamW.

    Attributes:
        m: первые моменты по именам параметров
        v: вторые моменты по именам параметров
        step: число выполненных обновлений
    """

    lr: float = 3e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def init_optim_state(params: Mapping[str, NdTensor], lr: float = 3e-4, weight_decay: float = 5e-4,
                     betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> OptimState:
    """Нулевые моменты той же размерности, что и параметры."""
    state = OptimState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)
    for name, param in params.items():
        state.m[name] = np.zeros_like(param.data)
        state.v[name] = np.zeros_like(param.data)
    return state


def grads_by_name(params: Mapping[str, NdTensor], grad_map: GradMap) -> Dict[str, np.ndarray]:
    """
    Сопоставляет карту градиентов (по тензорам) именам параметров.

    Raises:
        ContractError: у параметра нет градиента
    """
    out = {}
    for name, param in params.items():
        if param not in grad_map:
            raise ContractError(f"adamw_step: missing gradient for parameter '{name}'")
        out[name] = grad_map[param]
    return out


def adamw_step(params: Mapping[str, NdTensor], grads: Mapping[str, np.ndarray], state: OptimState,
               lr: Optional[float] = None) -> Tuple[ParamDict, OptimState]:
    """
    Одно обновление AdamW.

    Args:
        params: обучаемые параметры по именам
        grads: градиенты по тем же именам
        state: состояние оптимизатора (моменты обновляются на месте)
        lr: шаг для этого обновления (по умолчанию state.lr)

    Returns:
        (новые параметры, состояние)

    Raises:
        ContractError: отсутствует градиент или момент для параметра
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    updated: ParamDict = {}
    for name, param in params.items():
        if name not in grads:
            raise ContractError(f"adamw_step: missing gradient for parameter '{name}'")
        if name not in state.m:
            raise ContractError(f"adamw_step: optimizer state has no moments for '{name}'")
        g = np.asarray(grads[name], dtype=param.data.dtype)
        if g.shape != param.data.shape:
            raise ContractError(f"adamw_step: gradient dims {list(g.shape)} != parameter dims {list(param.dims)} for '{name}'")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        decayed = param.data * (1.0 - lr * state.weight_decay)
        new_data = decayed - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated[name] = NdTensor(new_data.astype(param.data.dtype, copy=False), requires_grad=True, name=name)
    return updated, state


def learning_rate(base_lr: float, step: int, warmup_steps: int = 0) -> float:
    """Постоянный шаг с необязательным линейным прогревом."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(float(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
