# shapes/query.py
"""
Ссылочные запросы: грамматика атрибутов, разрешение референта, токены.

Грамматика: the [comparative] [color] <kind> [moving <direction>]
Семантика:
    кандидаты - треки нужного вида (и цвета/направления, если заданы);
    comparative=none - кандидат должен быть ровно один;
    smaller/bigger - минимум/максимум размера среди ≥2 кандидатов;
    faster/slower - минимум/максимум модуля скорости среди ≥2 кандидатов.
"""
import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from constants import COLORS, COMPARATIVES, DIRECTIONS, PAD_ID, QUERY_SLOTS, SHAPE_KINDS, VOCAB, VOCAB_SIZE
from errors import ContractError, QueryParseError
from numerics import ops
from numerics.tensor import NdTensor
from shapes.scene import SceneSpec

logger = logging.getLogger(__name__)

ATTRIBUTES = ("kind", "comparative", "color", "direction")

VALID_ATTRIBUTES: Dict[str, Tuple[str, ...]] = {
    "kind": SHAPE_KINDS,
    "comparative": COMPARATIVES,
    "color": tuple(COLORS) + ("none",),
    "direction": DIRECTIONS + ("none",),
}

# доля запросов с компаративом, когда он возможен
COMPARATIVE_SHARE = 0.6


@dataclass(frozen=True)
class QuerySpec:
    """Кортеж атрибутов; текст и токены - детерминированные функции кортежа."""

    kind: str
    comparative: str = "none"
    color: Optional[str] = None
    direction: Optional[str] = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise QueryParseError(f"unknown kind {self.kind!r}", VALID_ATTRIBUTES)
        if self.comparative not in COMPARATIVES:
            raise QueryParseError(f"unknown comparative {self.comparative!r}", VALID_ATTRIBUTES)
        if self.color is not None and self.color not in COLORS:
            raise QueryParseError(f"unknown color {self.color!r}", VALID_ATTRIBUTES)
        if self.direction is not None and self.direction not in DIRECTIONS:
            raise QueryParseError(f"unknown direction {self.direction!r}", VALID_ATTRIBUTES)

    @property
    def words(self) -> List[str]:
        words = ["the"]
        if self.comparative != "none":
            words.append(self.comparative)
        if self.color is not None:
            words.append(self.color)
        words.append(self.kind)
        if self.direction is not None:
            words += ["moving", self.direction]
        return words

    @property
    def text(self) -> str:
        return " ".join(self.words)

    @property
    def token_ids(self) -> np.ndarray:
        ids = [VOCAB[word] for word in self.words]
        return np.array(ids + [PAD_ID] * (QUERY_SLOTS - len(ids)), dtype=np.int64)

    def attributes(self) -> Dict[str, str]:
        return {
            "kind": self.kind,
            "comparative": self.comparative,
            "color": self.color or "none",
            "direction": self.direction or "none",
        }


# ============================================================================
# Семантика
# ============================================================================

def resolve(query: QuerySpec, scene: SceneSpec) -> List[int]:
    """Индексы треков, удовлетворяющих запросу (единственный - корректный запрос)."""
    candidates = [
        i for i, track in enumerate(scene.tracks)
        if track.kind == query.kind
        and (query.color is None or track.color == query.color)
        and (query.direction is None or scene.direction(i) == query.direction)
    ]
    if query.comparative == "none":
        return candidates
    if len(candidates) < 2:
        return []
    if query.comparative in ("smaller", "bigger"):
        values = [scene.tracks[i].size for i in candidates]
    else:
        values = [scene.tracks[i].speed for i in candidates]
    target = min(values) if query.comparative in ("smaller", "slower") else max(values)
    return [i for i, v in zip(candidates, values) if v == target]


def unique_queries(scene: SceneSpec, referent: int) -> List[QuerySpec]:
    """Все кортежи грамматики, однозначно указывающие на referent (в каноническом порядке)."""
    track = scene.tracks[referent]
    found = []
    colors = dict.fromkeys((None, track.color))
    directions = dict.fromkeys((None, scene.direction(referent)))
    for comparative, color, direction in product(COMPARATIVES, colors, directions):
        query = QuerySpec(track.kind, comparative, color, direction)
        if resolve(query, scene) == [referent]:
            found.append(query)
    return found


def build_query(scene: SceneSpec, referent: int, rng: np.random.Generator) -> QuerySpec:
    """
    Выбирает запрос к referent; компаратив предпочитается, когда он возможен.

    Raises:
        ContractError: для трека нет однозначного запроса
    """
    options = unique_queries(scene, referent)
    if not options:
        raise ContractError(f"scene {scene.seed}: track {referent} has no uniquely-referring query")
    comparative = [q for q in options if q.comparative != "none"]
    plain = [q for q in options if q.comparative == "none"]
    pool = comparative if comparative and (not plain or rng.random() < COMPARATIVE_SHARE) else plain
    return pool[int(rng.integers(len(pool)))]


# ============================================================================
# Разбор текста запроса (CLI) и файлов query.txt
# ============================================================================

def _from_mapping(values: Dict[str, str]) -> QuerySpec:
    unknown = set(values) - set(ATTRIBUTES)
    if unknown:
        raise QueryParseError(f"unknown attribute(s): {', '.join(sorted(unknown))}", VALID_ATTRIBUTES)
    if "kind" not in values:
        raise QueryParseError("query must name a kind", VALID_ATTRIBUTES)
    for key, value in values.items():
        if value not in VALID_ATTRIBUTES[key]:
            raise QueryParseError(f"{key}={value!r} is not valid", VALID_ATTRIBUTES)
    color = values.get("color", "none")
    direction = values.get("direction", "none")
    return QuerySpec(
        values["kind"],
        values.get("comparative", "none"),
        None if color == "none" else color,
        None if direction == "none" else direction,
    )


def _from_words(words: Sequence[str]) -> QuerySpec:
    values: Dict[str, str] = {}
    rest = [w for w in words if w != "the"]
    i = 0
    while i < len(rest):
        word = rest[i]
        if word in SHAPE_KINDS and "kind" not in values:
            values["kind"] = word
        elif word in COMPARATIVES and word != "none" and "comparative" not in values:
            values["comparative"] = word
        elif word in COLORS and "color" not in values:
            values["color"] = word
        elif word == "moving" and i + 1 < len(rest) and rest[i + 1] in DIRECTIONS and "direction" not in values:
            values["direction"] = rest[i + 1]
            i += 1
        else:
            raise QueryParseError(f"unexpected word {word!r}", VALID_ATTRIBUTES)
        i += 1
    return _from_mapping(values)


def parse_query(text: str) -> QuerySpec:
    """
    Разбирает запрос в форме кортежа («kind=circle,comparative=smaller»)
    или текста грамматики («the smaller circle moving left»).

    Raises:
        QueryParseError: запрос вне грамматики (с перечнем допустимых атрибутов)
    """
    text = text.strip().lower()
    if not text:
        raise QueryParseError("empty query", VALID_ATTRIBUTES)
    if "=" in text:
        values: Dict[str, str] = {}
        for part in text.replace(";", ",").split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise QueryParseError(f"malformed attribute {part.strip()!r}", VALID_ATTRIBUTES)
            key, value = (p.strip() for p in part.split("=", 1))
            values[key] = value
        return _from_mapping(values)
    return _from_words(text.split())


def query_from_record(record: Dict[str, str]) -> QuerySpec:
    return _from_mapping({key: record[key] for key in ATTRIBUTES if key in record})


# ============================================================================
# Эмбеддинг условия
# ============================================================================

def embed_tokens(table: NdTensor, token_ids) -> NdTensor:
    """
    Строки таблицы по токенам; форма (..., K, D).

    Raises:
        ContractError: токен вне словаря
    """
    ids = np.asarray(token_ids)
    if ids.dtype.kind not in "iu" or (ids.size and (ids.min() < 0 or ids.max() >= VOCAB_SIZE)):
        raise ContractError(f"token ids must be integers in [0, {VOCAB_SIZE})")
    return ops.embedding(table, ids)


def embed_query(query: QuerySpec, table: NdTensor) -> NdTensor:
    """Эмбеддинг условия K×D: строка i - строка таблицы для токена i, паддинг - строка PAD_ID."""
    return embed_tokens(table, query.token_ids)
