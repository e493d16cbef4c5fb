# numerics/tensor.py
"""
Плотный тензор и лента градиентов (обратный режим автодифференцирования).

Каждая операция, у которой хотя бы один вход требует градиента, записывает
узел на активную ленту текущего потока. backward() проходит ленту в обратном
порядке создания, посещая каждый узел ровно один раз, и «расходует» её.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DTYPES = {"float32": np.float32, "float64": np.float64}
_local = threading.local()


def _thread_state():
    if not hasattr(_local, "tapes"):
        _local.dtype = np.float32
        _local.tapes = [GradTape()]
        _local.grad_enabled = True
    return _local


# ============================================================================
# Точность вычислений
# ============================================================================

def default_dtype() -> type:
    """Текущая точность по умолчанию (float32, если не переключена)."""
    return _thread_state().dtype


def set_default_dtype(name: str) -> None:
    """
    Переключает точность по умолчанию для текущего потока.

    Args:
        name: "float32" или "float64"
    """
    if name not in _DTYPES:
        raise ContractError(f"unsupported precision {name!r}; expected float32 or float64")
    _thread_state().dtype = _DTYPES[name]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Временная смена точности (64 бита - режим тестов)."""
    state = _thread_state()
    previous = state.dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        state.dtype = previous


# ============================================================================
# Тензор
# ============================================================================

class NdTensor:
    """
    Неизменяемый по соглашению плотный тензор вещественных чисел.

    Attributes:
        data: массив numpy (float32 или float64), построчный порядок
        requires_grad: нужен ли градиент по этому тензору
        node: узел ленты, создавший тензор (None у листьев)
        name: необязательное имя (для параметров)
    """

    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else default_dtype()
        self.data = np.ascontiguousarray(array, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.node: Optional["TapeNode"] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "NdTensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.node = None
        out.name = None
        return out

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    shape = dims

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "NdTensor":
        return NdTensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "NdTensor":
        return NdTensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        grad = ", requires_grad" if self.requires_grad else ""
        return f"NdTensor(dims={list(self.dims)}, dtype={self.data.dtype}{grad})"

    # арифметика делегируется в numerics.ops
    def __add__(self, other):
        from numerics import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from numerics import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from numerics import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from numerics import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from numerics import ops
        return ops.div(self, other)

    def __neg__(self):
        from numerics import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from numerics import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from numerics import ops
        return ops.slice(self, index)

    def reshape(self, *dims):
        from numerics import ops
        if len(dims) == 1 and isinstance(dims[0], (tuple, list)):
            dims = tuple(dims[0])
        return ops.reshape(self, dims)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> NdTensor:
    """Создаёт лист в текущей точности по умолчанию."""
    return NdTensor(np.asarray(data, dtype=default_dtype()), requires_grad=requires_grad, name=name)


# ============================================================================
# Лента
# ============================================================================

@dataclass
class TapeNode:
    """Запись одной операции: вид, родители, выход и правило обратного хода."""

    op: str
    parents: Tuple[NdTensor, ...]
    output: NdTensor
    backward: BackwardFn
    index: int
    tape: "GradTape"
    generation: int


class GradTape:
    """Список узлов в порядке создания; расходуется при backward()."""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.generation = 0

    def record(self, op: str, parents: Tuple[NdTensor, ...], output: NdTensor, backward_fn: BackwardFn) -> TapeNode:
        node = TapeNode(op, parents, output, backward_fn, len(self.nodes), self, self.generation)
        self.nodes.append(node)
        return node

    def consume(self) -> None:
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> GradTape:
    return _thread_state().tapes[-1]


def grad_enabled() -> bool:
    return _thread_state().grad_enabled


@contextmanager
def new_tape() -> Iterator[GradTape]:
    """Открывает отдельную ленту для блока кода."""
    state = _thread_state()
    tape = GradTape()
    state.tapes.append(tape)
    try:
        yield tape
    finally:
        state.tapes.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    """Отключает запись на ленту (инференс, статистики)."""
    state = _thread_state()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


def record_op(op: str, data: np.ndarray, parents: Sequence[NdTensor], backward_fn: BackwardFn) -> NdTensor:
    """
    Оборачивает результат операции и, при необходимости, пишет узел на ленту.

    Args:
        op: имя операции
        data: результат прямого прохода
        parents: входные тензоры
        backward_fn: g -> градиенты по каждому родителю (None - нет вклада)

    Returns:
        NdTensor: выход операции
    """
    parents = tuple(parents)
    dtype = np.result_type(*(p.data.dtype for p in parents)) if parents else default_dtype()
    data = np.asarray(data)
    if data.dtype != dtype:
        data = data.astype(dtype)
    needs_grad = grad_enabled() and any(p.requires_grad for p in parents)
    out = NdTensor._from_op(data, needs_grad)
    if needs_grad:
        out.node = active_tape().record(op, parents, out, backward_fn)
    return out


GradMap = Dict[NdTensor, np.ndarray]


def backward(loss: NdTensor) -> GradMap:
    """
    Обратный проход от скалярной функции потерь.

    Args:
        loss: скаляр, вычисленный на активной ленте

    Returns:
        GradMap: градиент для каждого листа с requires_grad (размерности листа)

    Raises:
        ContractError: нескалярная потеря или лента уже израсходована
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got dims {list(loss.dims)}")
    if not loss.requires_grad:
        return {}
    if loss.node is None:
        return {loss: np.ones_like(loss.data)}

    root = loss.node
    tape = root.tape
    if root.generation != tape.generation:
        raise ContractError("backward: tape already consumed")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tuple[NdTensor, np.ndarray]] = {}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node is None:
                key = id(parent)
                if key in leaves:
                    leaves[key] = (parent, leaves[key][1] + pg)
                else:
                    leaves[key] = (parent, pg)
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    tape.consume()
    return {leaf: grad.astype(leaf.data.dtype, copy=False).reshape(leaf.dims) for leaf, grad in leaves.values()}
