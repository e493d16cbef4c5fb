# constants.py
"""
Константы проекта.
Все магические строки, словарь запросов, форматы файлов и коды выхода
централизованы здесь.
"""

# ============================================================================
# Сцены MovingShapes-Ref
# ============================================================================
SHAPE_KINDS = ("circle", "square", "triangle")

COLORS = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.30, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "magenta": (0.90, 0.20, 0.85),
    "cyan": (0.10, 0.85, 0.90),
}

COMPARATIVES = ("smaller", "bigger", "faster", "slower", "none")
DIRECTIONS = ("left", "right", "up", "down")

MIN_SIZE = 3
MAX_SIZE = 9
MIN_TRACKS = 2
MAX_TRACKS = 4
MAX_SPEED = 2.0
# минимальный зазор скоростей внутри одного вида (исключает ничьи)
SPEED_GAP = 0.25

DEFAULT_FRAMES = 8
DEFAULT_HEIGHT = 32
DEFAULT_WIDTH = 32

# доля выборок, входящих в пары «одно видео - два запроса»
PAIRED_FRACTION = 0.4

# ============================================================================
# Словарь токенов запроса (32 слота, 0 - паддинг)
# ============================================================================
PAD_TOKEN = "<pad>"
VOCAB_SIZE = 32
QUERY_SLOTS = 8

_WORDS = (
    PAD_TOKEN, "the",
    "circle", "square", "triangle",
    "smaller", "bigger", "faster", "slower",
    "red", "green", "blue", "yellow", "magenta", "cyan",
    "moving", "left", "right", "up", "down",
)
VOCAB = {word: index for index, word in enumerate(_WORDS)}
PAD_ID = VOCAB[PAD_TOKEN]

# ============================================================================
# Контейнер FRVS
# ============================================================================
FRVS_MAGIC = b"FRVS"
FRVS_VERSION = 1
DTYPE_F32 = 0
DTYPE_F64 = 1
DTYPE_U8 = 2

# ============================================================================
# Имена файлов в каталогах данных и запусков
# ============================================================================
VIDEO_SUFFIX = ".video.frvs"
MASK_SUFFIX = ".mask.frvs"
QUERY_SUFFIX = ".query.txt"
INDEX_WIDTH = 5

CONFIG_ECHO = "config.txt"
CODEC_CHECKPOINT = "codec.frvs"
FLOW_CHECKPOINT = "flow.frvs"
FLOW_EPOCH_TEMPLATE = "flow_epoch_{epoch:03d}.frvs"
LOSS_LOG = "loss.log"
CODEC_LOSS_LOG = "codec_loss.log"
DECODER_LOSS_LOG = "decoder_{strategy}_loss.log"
PROBS_FILE = "probs.frvs"
PREDICTION_TENSOR = "prediction"
EVAL_TSV = "eval.tsv"
EVAL_SUMMARY = "summary.txt"
CODEC_EVAL_TSV = "codec_eval.tsv"
ABLATION_TSV = "ablation.tsv"
ABLATION_SUMMARY = "ablation_summary.txt"

# ============================================================================
# Парадигмы и стратегии декодера
# ============================================================================
PARADIGM_VIDEO2MASK = "video2mask-flow"
PARADIGM_NOISE2MASK = "noise2mask-flow"
PARADIGM_ONESTEP_MASK = "onestep-mask"
PARADIGM_ONESTEP_VELOCITY = "onestep-velocity"
PARADIGMS = (
    PARADIGM_VIDEO2MASK,
    PARADIGM_NOISE2MASK,
    PARADIGM_ONESTEP_MASK,
    PARADIGM_ONESTEP_VELOCITY,
)
FLOW_PARADIGMS = (PARADIGM_VIDEO2MASK, PARADIGM_NOISE2MASK)
ONESTEP_PARADIGMS = (PARADIGM_ONESTEP_MASK, PARADIGM_ONESTEP_VELOCITY)

STRATEGY_FROZEN = "frozen"
STRATEGY_CONV_HEAD = "conv-head"
STRATEGY_FINETUNED = "finetuned"
DECODER_STRATEGIES = (STRATEGY_FROZEN, STRATEGY_CONV_HEAD, STRATEGY_FINETUNED)

BINARIZE_THRESHOLD = 0.5
LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0

# ============================================================================
# Сетка абляций (строки таблицы абляций)
# ============================================================================
ABLATION_COLUMNS = ("paradigm", "p_bbs", "spa", "dvi", "seed", "J", "F", "JF")

DEFAULT_GRID = (
    ("a", {"paradigm": PARADIGM_NOISE2MASK, "p_bbs": 0.0, "spa": False, "dvi": True}),
    ("b", {"paradigm": PARADIGM_ONESTEP_MASK, "p_bbs": 0.0, "spa": False, "dvi": False}),
    ("c", {"paradigm": PARADIGM_ONESTEP_VELOCITY, "p_bbs": 0.0, "spa": False, "dvi": False}),
    ("c-base", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.0, "spa": False, "dvi": False}),
    ("e", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.5, "spa": False, "dvi": False}),
    ("g", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.5, "spa": True, "dvi": False}),
    ("h", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.5, "spa": True, "dvi": True}),
)

FULL_GRID = DEFAULT_GRID[:4] + (
    ("d", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.25, "spa": False, "dvi": False}),
) + DEFAULT_GRID[4:5] + (
    ("f", {"paradigm": PARADIGM_VIDEO2MASK, "p_bbs": 0.75, "spa": False, "dvi": False}),
) + DEFAULT_GRID[5:]

DEFAULT_SEEDS = (0, 1, 2)

# ============================================================================
# Коды выхода CLI
# ============================================================================
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_STAGE = 3
EXIT_BAD_QUERY = 4
EXIT_MISALIGNED = 5
