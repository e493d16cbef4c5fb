"""
Вспомогательные модули: этапы конвейера, зерна, параллельное отображение.
"""

from .stages import Stages, detect_stage, require_stage, stage_reached
from .seeding import derive_seed, rng_for
from .parallel import parallel_map

__all__ = [
    'Stages',
    'detect_stage',
    'require_stage',
    'stage_reached',
    'derive_seed',
    'rng_for',
    'parallel_map',
]
