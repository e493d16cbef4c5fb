# shapes/render.py
"""
Растеризация сцен с жёсткими краями.

Пиксель (i, j) принадлежит фигуре, если его центр (j+0.5, i+0.5) лежит
внутри аналитического носителя. Более поздние треки рисуются поверх.
"""
from typing import Tuple

import numpy as np

from constants import COLORS
from shapes.scene import SceneSpec, ShapeTrack


def point_in_shape(kind: str, cx: float, cy: float, size: float, px, py):
    """
    Тест «точка внутри фигуры» (работает и со скалярами, и с массивами).

    Треугольник: вершина (cx, cy−s), основание от (cx−s, cy+s) до (cx+s, cy+s).
    """
    dx = px - cx
    dy = py - cy
    if kind == "circle":
        return dx * dx + dy * dy <= size * size
    if kind == "square":
        return (np.abs(dx) <= size) & (np.abs(dy) <= size)
    if kind == "triangle":
        return (dy >= -size) & (dy <= size) & (2.0 * np.abs(dx) <= dy + size)
    raise ValueError(f"unknown shape kind {kind!r}")


def pixel_centers(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    return xs, ys


def track_masks(track: ShapeTrack, frames: int, height: int, width: int) -> np.ndarray:
    """Носитель одного трека по кадрам: T×H×W, uint8 {0,1}."""
    xs, ys = pixel_centers(height, width)
    out = np.zeros((frames, height, width), dtype=np.uint8)
    for t in range(frames):
        cx, cy = track.center(t, height, width)
        out[t] = point_in_shape(track.kind, cx, cy, track.size, xs, ys)
    return out


def background(spec: SceneSpec) -> np.ndarray:
    """Серый градиент с лёгкой текстурой, постоянный во времени."""
    rng = np.random.default_rng(spec.seed ^ 0x5F3759DF)
    ys, xs = np.meshgrid(np.linspace(0.0, 1.0, spec.height), np.linspace(0.0, 1.0, spec.width), indexing="ij")
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = 0.35 + 0.2 * (np.cos(angle) * xs + np.sin(angle) * ys + 1.0) / 2.0
    texture = rng.uniform(-0.03, 0.03, size=(spec.height, spec.width))
    gray = np.clip(ramp + texture, 0.0, 1.0)
    return np.repeat(gray[:, :, None], 3, axis=2)


def render(spec: SceneSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Рисует сцену.

    Returns:
        (video T×H×W×3 float32 в [0,1], masks N×T×H×W uint8 - неперекрытые носители треков)
    """
    masks = np.stack([track_masks(track, spec.frames, spec.height, spec.width) for track in spec.tracks])
    base = background(spec)
    video = np.repeat(base[None], spec.frames, axis=0)
    for track, mask in zip(spec.tracks, masks):
        video[mask.astype(bool)] = COLORS[track.color]
    return video.astype(np.float32), masks
