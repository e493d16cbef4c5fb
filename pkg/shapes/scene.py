# shapes/scene.py
"""
Описание сцен MovingShapes-Ref: треки фигур и их движение с отскоком.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from constants import (
    COLORS,
    DEFAULT_FRAMES,
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    MAX_SIZE,
    MAX_SPEED,
    MAX_TRACKS,
    MIN_SIZE,
    MIN_TRACKS,
    SHAPE_KINDS,
    SPEED_GAP,
)
from errors import ContractError

logger = logging.getLogger(__name__)

MIN_SPEED = 0.3
MIN_DISPLACEMENT = 0.5
_MAX_ATTEMPTS = 200


def _bounce(position: float, low: float, high: float) -> float:
    """Отражение координаты в отрезок [low, high]."""
    span = high - low
    if span <= 0:
        return low
    u = (position - low) % (2.0 * span)
    if u > span:
        u = 2.0 * span - u
    return low + u


@dataclass(frozen=True)
class ShapeTrack:
    """
    Одна фигура сцены.

    Attributes:
        kind: circle | square | triangle
        color: имя цвета из constants.COLORS
        size: радиус или половина стороны в пикселях (3..9)
        x, y: начальный центр (пиксели, y вниз)
        vx, vy: скорость (пикселей за кадр)
    """

    kind: str
    color: str
    size: int
    x: float
    y: float
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def center(self, frame: int, height: int, width: int) -> Tuple[float, float]:
        """Центр на кадре frame; носитель фигуры не выходит за кадр."""
        s = float(self.size)
        cx = _bounce(self.x + self.vx * frame, s, width - s)
        cy = _bounce(self.y + self.vy * frame, s, height - s)
        return cx, cy

    def direction(self, frames: int, height: int, width: int) -> Optional[str]:
        """
        Преобладающее направление смещения за клип (с учётом отскоков).

        Сравнивается центр первого и последнего кадра; None, если смещение
        меньше MIN_DISPLACEMENT пикселя (неподвижная фигура или возврат после отскока).
        """
        x0, y0 = self.center(0, height, width)
        x1, y1 = self.center(frames - 1, height, width)
        dx, dy = x1 - x0, y1 - y0
        if max(abs(dx), abs(dy)) < MIN_DISPLACEMENT:
            return None
        if abs(dx) >= abs(dy):
            return "right" if dx > 0 else "left"
        return "down" if dy > 0 else "up"


@dataclass(frozen=True)
class SceneSpec:
    frames: int
    height: int
    width: int
    tracks: Tuple[ShapeTrack, ...]
    seed: int

    def to_bytes(self) -> bytes:
        """Каноническое представление (для сравнения и дайджестов)."""
        payload = asdict(self)
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def direction(self, index: int) -> Optional[str]:
        return self.tracks[index].direction(self.frames, self.height, self.width)


def _separated(candidate: ShapeTrack, tracks: List[ShapeTrack]) -> bool:
    # внутри одного вида размеры различны, скорости отличаются не меньше SPEED_GAP
    for other in tracks:
        if other.kind != candidate.kind:
            continue
        if other.size == candidate.size or abs(other.speed - candidate.speed) < SPEED_GAP:
            return False
    return True


def _sample_track(rng: np.random.Generator, kind: str, color: str, height: int, width: int) -> ShapeTrack:
    size = int(rng.integers(MIN_SIZE, MAX_SIZE + 1))
    x = float(rng.uniform(size, width - size))
    y = float(rng.uniform(size, height - size))
    speed = float(rng.uniform(MIN_SPEED, MAX_SPEED))
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    return ShapeTrack(kind, color, size, x, y, speed * math.cos(angle), speed * math.sin(angle))


def generate_scene(seed: int, frames: int = DEFAULT_FRAMES, height: int = DEFAULT_HEIGHT,
                   width: int = DEFAULT_WIDTH) -> SceneSpec:
    """
    Генерирует сцену из 2–4 фигур; минимум две фигуры одного вида.

    Args:
        seed: зерно; одинаковое зерно - одинаковая сцена
        frames, height, width: размеры клипа

    Returns:
        SceneSpec
    """
    if min(height, width) < 2 * MAX_SIZE + 2:
        raise ContractError(f"frame {height}x{width} too small for shape size up to {MAX_SIZE}")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(MIN_TRACKS, MAX_TRACKS + 1))
    shared = str(rng.choice(SHAPE_KINDS))
    kinds = [shared, shared] + [str(rng.choice(SHAPE_KINDS)) for _ in range(count - 2)]
    kinds = [kinds[i] for i in rng.permutation(count)]
    colors = [str(c) for c in rng.choice(list(COLORS), size=count, replace=False)]

    tracks: List[ShapeTrack] = []
    for kind, color in zip(kinds, colors):
        for _ in range(_MAX_ATTEMPTS):
            candidate = _sample_track(rng, kind, color, height, width)
            if _separated(candidate, tracks):
                tracks.append(candidate)
                break
        else:
            raise ContractError(f"scene seed {seed}: could not place a separable {kind}")
    return SceneSpec(frames, height, width, tuple(tracks), int(seed))
