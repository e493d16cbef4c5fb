"""
Латентный кодек: кодер видео и масок, декодер масок, стратегии адаптации.
"""

from .model import (
    CodecParams,
    decode,
    denormalize_latent,
    encode,
    init_codec,
    normalize_latent,
    sample_posterior,
)
from .training import finetune_decoder, pretrain_codec, reconstruction_report

__all__ = [
    'CodecParams',
    'decode',
    'denormalize_latent',
    'encode',
    'init_codec',
    'normalize_latent',
    'sample_posterior',
    'finetune_decoder',
    'pretrain_codec',
    'reconstruction_report',
]
