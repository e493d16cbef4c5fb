"""
Процедурный бенчмарк MovingShapes-Ref: сцены, рендер, запросы, наборы данных.
"""

from .scene import SceneSpec, ShapeTrack, generate_scene
from .render import render
from .query import QuerySpec, embed_query, parse_query, resolve
from .dataset import Sample, generate_dataset, load_split

__all__ = [
    'SceneSpec',
    'ShapeTrack',
    'generate_scene',
    'render',
    'QuerySpec',
    'embed_query',
    'parse_query',
    'resolve',
    'Sample',
    'generate_dataset',
    'load_split',
]
