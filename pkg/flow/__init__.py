"""
Поток видео → маска: обучение поля скорости, инференс Эйлером, абляции.
"""

from .engine import (
    FlowBatch,
    FlowConfig,
    NetField,
    OracleField,
    euler_integrate,
    infer,
    infer_batch,
    interpolate_state,
    make_batch,
    sample_timestep,
    target_velocity,
)
from .training import train_flow, train_step
from .ablation import evaluate_decoder_strategies, parse_grid, run_ablation

__all__ = [
    'FlowBatch',
    'FlowConfig',
    'NetField',
    'OracleField',
    'euler_integrate',
    'infer',
    'infer_batch',
    'interpolate_state',
    'make_batch',
    'sample_timestep',
    'target_velocity',
    'train_flow',
    'train_step',
    'evaluate_decoder_strategies',
    'parse_grid',
    'run_ablation',
]
