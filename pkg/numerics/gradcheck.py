# numerics/gradcheck.py
"""
Проверка градиентов центральными конечными разностями по случайным направлениям.

Аналитическая производная по направлению считается в точности параметров,
эталонная разностная - всегда в 64 битах, поэтому погрешность отчёта
отражает ошибки правил обратного хода, а не округление разностной схемы.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np

from errors import ContractError
from numerics import ops
from numerics.layers import param_count
from numerics.tensor import NdTensor, backward, new_tape, no_grad, precision

logger = logging.getLogger(__name__)

MAX_PARAMS = 100_000
DENOM_EPS = 1e-8

NetFn = Callable[[Mapping[str, NdTensor], Any], NdTensor]


@dataclass
class GradCheckReport:
    """Итог проверки: максимальная относительная ошибка и вердикт."""

    max_rel_error: float
    tolerance: float
    passed: bool
    directions: int
    param_count: int
    errors: List[float] = field(default_factory=list)


def _to_float64(value: Any) -> Any:
    if isinstance(value, NdTensor):
        return NdTensor(value.data.astype(np.float64), requires_grad=False)
    if isinstance(value, np.ndarray) and value.dtype.kind == "f":
        return value.astype(np.float64)
    if isinstance(value, (list, tuple)):
        return type(value)(_to_float64(v) for v in value)
    if isinstance(value, dict):
        return {k: _to_float64(v) for k, v in value.items()}
    return value


def grad_check(net: NetFn, params: Mapping[str, NdTensor], inputs: Any, tolerance: float = 1e-3,
               directions: int = 20, step: Optional[float] = None, seed: int = 0) -> GradCheckReport:
    """
    Сравнивает аналитические и разностные производные по направлениям.

    Args:
        net: функция (params, inputs) -> NdTensor; нескалярный выход
             сворачивается случайной проекцией
        params: параметры; проверяются те, у которых requires_grad
        inputs: входы сети (NdTensor, массивы или их контейнеры)
        tolerance: допустимая относительная ошибка
        directions: число случайных направлений
        step: шаг разностей (по умолчанию 1e-3 для 32 бит, 1e-5 для 64)
        seed: зерно направлений и проекции

    Returns:
        GradCheckReport

    Raises:
        ContractError: слишком много параметров для проверки на столе
    """
    total = param_count(params)
    if total > MAX_PARAMS:
        raise ContractError(f"grad_check: {total} parameters exceed desk-scale guard {MAX_PARAMS}")
    rng = np.random.default_rng(seed)
    trainable = {name: p for name, p in params.items() if p.requires_grad}
    dtype = next(iter(trainable.values())).data.dtype if trainable else np.float32

    with new_tape():
        out = net(params, inputs)
        projection = rng.standard_normal(out.dims)
        loss = out if out.size == 1 else ops.sum(ops.mul(out, NdTensor(projection.astype(out.data.dtype))))
        grad_map = backward(loss)
    grads = {name: grad_map.get(p, np.zeros_like(p.data)).astype(np.float64) for name, p in trainable.items()}

    h = step if step is not None else (1e-3 if dtype == np.float32 else 1e-5)
    base = {name: p.data.astype(np.float64) for name, p in params.items()}
    inputs64 = _to_float64(inputs)

    def evaluate(shift: Dict[str, np.ndarray], scale: float) -> float:
        shifted = {
            name: NdTensor(value + scale * shift[name] if name in shift else value, requires_grad=False)
            for name, value in base.items()
        }
        with precision("float64"), no_grad():
            value = net(shifted, inputs64).data.astype(np.float64)
        return float(value.reshape(-1)[0]) if value.size == 1 else float((value * projection).sum())

    errors: List[float] = []
    for _ in range(directions):
        direction = {name: rng.standard_normal(p.dims) for name, p in trainable.items()}
        norm = np.sqrt(sum(float((d * d).sum()) for d in direction.values())) or 1.0
        direction = {name: d / norm for name, d in direction.items()}
        analytic = sum(float((grads[name] * direction[name]).sum()) for name in trainable)
        numeric = (evaluate(direction, h) - evaluate(direction, -h)) / (2.0 * h)
        denom = max(abs(analytic), abs(numeric), DENOM_EPS)
        errors.append(abs(analytic - numeric) / denom)

    worst = max(errors) if errors else 0.0
    report = GradCheckReport(worst, tolerance, worst < tolerance, directions, total, errors)
    logger.debug(f"[GRAD] max rel error {worst:.3e} (tol {tolerance:g}, {total} params)")
    return report
