"""
Вычислительное ядро: тензоры, лента градиентов, AdamW, проверка градиентов.
"""

from .tensor import (
    GradMap,
    GradTape,
    NdTensor,
    backward,
    default_dtype,
    new_tape,
    no_grad,
    precision,
    record_op,
    set_default_dtype,
    tensor,
)
from .ops import forward_op
from .optim import OptimState, adamw_step, grads_by_name, init_optim_state
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    'GradMap',
    'GradTape',
    'NdTensor',
    'backward',
    'default_dtype',
    'new_tape',
    'no_grad',
    'precision',
    'record_op',
    'set_default_dtype',
    'tensor',
    'forward_op',
    'OptimState',
    'adamw_step',
    'grads_by_name',
    'init_optim_state',
    'GradCheckReport',
    'grad_check',
]
