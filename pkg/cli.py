# cli.py
"""
Точка входа командной строки.

    python cli.py gen-data --out data --n 2000 --seed 0 --split train
    python cli.py train-codec --config run.txt --out runs/a
    python cli.py finetune-decoder --config run.txt --out runs/a
    python cli.py train-flow --config run.txt --out runs/a
    python cli.py infer --checkpoint runs/a --video clip.video.frvs --query "the smaller circle" --out pred
    python cli.py predict --checkpoint runs/a --data data --split val --out runs/a/pred
    python cli.py eval --pred runs/a/pred --gt data/val
    python cli.py eval-codec --checkpoint runs/a --data data
    python cli.py ablate --grid grid.txt --out runs/ablate

Коды выхода: 0 успех, 2 ошибка использования/конфигурации/ввода-вывода,
3 нет предыдущего этапа, 4 запрос вне грамматики, 5 несовпадение наборов.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

import config as env
from codec.training import finetune_decoder, pretrain_codec, reconstruction_report
from config import echo_config, load_config
from constants import (
    CODEC_CHECKPOINT,
    CODEC_EVAL_TSV,
    CODEC_LOSS_LOG,
    DECODER_LOSS_LOG,
    DECODER_STRATEGIES,
    DEFAULT_FRAMES,
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    EVAL_SUMMARY,
    EVAL_TSV,
    EXIT_BAD_QUERY,
    EXIT_FAILURE,
    EXIT_MISALIGNED,
    EXIT_MISSING_STAGE,
    EXIT_OK,
    EXIT_USAGE,
    FLOW_CHECKPOINT,
    MASK_SUFFIX,
    PREDICTION_TENSOR,
    PROBS_FILE,
    STRATEGY_FROZEN,
)
from errors import (
    AlignmentError,
    ContractError,
    DatasetIOError,
    FlowSegError,
    FrvsFormatError,
    MissingStageError,
    QueryParseError,
    ShapeError,
)
from flow.ablation import evaluate_decoder_strategies, parse_grid, run_ablation
from flow.engine import FlowConfig, NetField, infer_batch, infer_clips
from flow.training import train_flow
from metrics import evaluate_dirs, format_summary, write_eval_tsv
from numerics.tensor import precision
from shapes.dataset import generate_dataset, load_split
from shapes.query import parse_query
from storage.atomic import atomic_write_bytes, read_bytes
from storage.checkpoints import FlowCheckpoint, load_codec, load_flow_checkpoint, save_codec
from storage.dataset_io import read_video, sample_stem
from storage.frvs import write_frvs
from storage.loss_log import write_loss_log
from storage.pgm import write_mask_frames
from utils.stages import Stages, require_stage, stage_reached
from velocity_net import NetConfig

logger = logging.getLogger(__name__)


# ============================================================================
# Вспомогательное
# ============================================================================

def _flow_checkpoint_path(checkpoint: str) -> Path:
    """--checkpoint принимает каталог запуска или файл чекпоинта."""
    path = Path(checkpoint)
    if path.is_dir() or not path.suffix:
        return require_stage(path, Stages.FLOW_TRAINED)
    if not path.exists():
        raise MissingStageError(Stages.FLOW_TRAINED, path)
    return path


def _load_flow(checkpoint: str) -> FlowCheckpoint:
    loaded = load_flow_checkpoint(_flow_checkpoint_path(checkpoint))
    logger.info(f"[CLI] ✓ Чекпоинт: эпоха {loaded.epoch}, шаг {loaded.step}")
    return loaded


def _net_field(checkpoint: FlowCheckpoint) -> NetField:
    return NetField(checkpoint.params, NetConfig.from_run_config(checkpoint.config))


def _step_losses(values: Sequence[float]):
    return list(enumerate(values))


# ============================================================================
# Команды
# ============================================================================

def cmd_gen_data(args) -> int:
    summary = generate_dataset(args.out, args.n, args.seed, args.split, args.frames, args.height, args.width)
    print(f"{summary.split}\t{summary.count}\t{summary.digest}")
    return EXIT_OK


def cmd_train_codec(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    echo_config(config, out)
    if stage_reached(out, Stages.CODEC_PRETRAINED) and not args.force:
        logger.info(f"[CODEC] ✓ Кодек уже обучен: {out / CODEC_CHECKPOINT} (--force для переобучения)")
        return EXIT_OK
    samples = load_split(config.data_dir, config.train_split, config.train_limit)
    with precision(config.precision):
        result = pretrain_codec(np.stack([s.video for s in samples]), config)
    write_loss_log(out / CODEC_LOSS_LOG, _step_losses(result.step_losses))
    save_codec(out / CODEC_CHECKPOINT, result.codec)
    return EXIT_OK


def cmd_finetune_decoder(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    path = require_stage(out, Stages.CODEC_PRETRAINED)
    echo_config(config, out)
    codec = load_codec(path)
    strategies = [s for s in DECODER_STRATEGIES if s != STRATEGY_FROZEN] if args.strategy == "all" else [
        args.strategy or config.decoder_strategy]
    if strategies == [STRATEGY_FROZEN]:
        logger.info("[CODEC] Стратегия frozen: декодер не дообучается")
        return EXIT_OK
    samples = load_split(config.data_dir, config.train_split, config.train_limit)
    masks = np.stack([s.mask for s in samples])
    for strategy in strategies:
        if strategy in codec.strategies() and not args.force:
            logger.info(f"[CODEC] ✓ Стратегия {strategy} уже обучена")
            continue
        with precision(config.precision):
            result = finetune_decoder(codec, masks, strategy, config)
        codec = result.codec
        write_loss_log(out / DECODER_LOSS_LOG.format(strategy=strategy), _step_losses(result.step_losses))
        save_codec(out / CODEC_CHECKPOINT, codec)
    return EXIT_OK


def cmd_train_flow(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    codec = load_codec(require_stage(out, Stages.CODEC_PRETRAINED))
    if config.decoder_strategy not in codec.strategies():
        logger.warning(f"[FLOW] ⚠️ Декодер '{config.decoder_strategy}' не обучен; инференс возьмёт доступный")
    train = load_split(config.data_dir, config.train_split, config.train_limit)
    val = None
    if (Path(config.data_dir) / config.val_split).is_dir():
        val = load_split(config.data_dir, config.val_split, config.val_limit)
    with precision(config.precision):
        result = train_flow(train, codec, config, run_dir=out, val_samples=val, resume=not args.restart)
    if result.val_scores:
        print(f"val J&F\t{result.val_scores[-1]:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    query = parse_query(args.query)
    checkpoint = _load_flow(args.checkpoint)
    config = checkpoint.config
    video = np.asarray(read_video(args.video), dtype=np.float32)
    expected = (config.frames, config.height, config.width, 3)
    if video.shape != expected:
        raise ShapeError("infer", video.shape, expected, detail="video dims differ from the training config")
    with precision(config.precision):
        prediction = infer_clips(video[None], query.token_ids[None], _net_field(checkpoint), checkpoint.codec,
                                 FlowConfig.from_run_config(config))[0]
    out = Path(args.out)
    frames = write_mask_frames(out, prediction.mask)
    write_frvs(out / PROBS_FILE, {"probs": prediction.probs})
    logger.info(f"[CLI] ✅ «{query.text}»: {len(frames)} кадров → {out}")
    print(f"{query.text}\t{len(frames)}\t{out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    checkpoint = _load_flow(args.checkpoint)
    config = checkpoint.config
    samples = load_split(args.data, args.split, args.limit)
    with precision(config.precision):
        predictions = infer_batch(samples, _net_field(checkpoint), checkpoint.codec, FlowConfig.from_run_config(config))
    out = Path(args.out)
    for sample, prediction in zip(samples, predictions):
        write_frvs(out / f"{sample_stem(sample.index)}{MASK_SUFFIX}", {PREDICTION_TENSOR: prediction.mask})
    logger.info(f"[CLI] ✅ Предсказано {len(samples)} масок → {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    result = evaluate_dirs(args.pred, args.gt, args.aggregation)
    out = Path(args.out or args.pred)
    write_eval_tsv(out / EVAL_TSV, result)
    summary = format_summary(result, f"{args.pred} vs {args.gt}")
    atomic_write_bytes(out / EVAL_SUMMARY, summary.encode("utf-8"))
    print(summary, end="")
    return EXIT_OK


def cmd_eval_codec(args) -> int:
    run_dir = Path(args.checkpoint)
    codec = load_codec(require_stage(run_dir, Stages.CODEC_PRETRAINED))
    samples = load_split(args.data, args.split, args.limit)
    report = reconstruction_report(codec, [s.mask for s in samples], aggregation=args.aggregation)
    lines = ["# decoder strategies: reconstruction", "strategy\tJ\tF\tJF"]
    lines += [f"{name}\t{r.mean_j:.4f}\t{r.mean_f:.4f}\t{r.mean_jf:.4f}" for name, r in report.items()]
    if stage_reached(run_dir, Stages.FLOW_TRAINED):
        checkpoint = load_flow_checkpoint(run_dir / FLOW_CHECKPOINT)
        with precision(checkpoint.config.precision):
            segmentation = evaluate_decoder_strategies(_net_field(checkpoint), codec, samples, checkpoint.config)
        lines += ["# decoder strategies: segmentation", "strategy\tJ\tF\tJF"]
        lines += [f"{name}\t{r.mean_j:.4f}\t{r.mean_f:.4f}\t{r.mean_jf:.4f}" for name, r in segmentation.items()]
    text = "\n".join(lines) + "\n"
    atomic_write_bytes(run_dir / CODEC_EVAL_TSV, text.encode("utf-8"))
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    try:
        grid_text = read_bytes(args.grid).decode("utf-8") if args.grid else ""
    except UnicodeDecodeError as e:
        raise DatasetIOError(args.grid, f"grid file is not UTF-8 ({e})") from None
    grid, seeds = parse_grid(grid_text)
    codec = load_codec(require_stage(Path(args.codec or args.out), Stages.CODEC_PRETRAINED))
    train = load_split(config.data_dir, config.train_split, config.train_limit)
    val = load_split(config.data_dir, config.val_split, config.val_limit)
    echo_config(config, args.out)
    with precision(config.precision):
        rows = run_ablation(grid, seeds, train, val, codec, config, out_dir=args.out)
    logger.info(f"[ABLATE] ✅ {len(rows)} строк отчёта → {args.out}")
    return EXIT_OK


# ============================================================================
# Разбор аргументов
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowseg", description="Text-conditioned video→mask latent flow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a MovingShapes-Ref split")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    p.add_argument("--height", type=int, default=DEFAULT_HEIGHT)
    p.add_argument("--width", type=int, default=DEFAULT_WIDTH)
    p.set_defaults(handler=cmd_gen_data)

    for name, handler, help_text in (
        ("train-codec", cmd_train_codec, "pretrain the latent codec on videos"),
        ("finetune-decoder", cmd_finetune_decoder, "adapt the decoder to masks"),
        ("train-flow", cmd_train_flow, "train the velocity field"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        if name == "finetune-decoder":
            p.add_argument("--strategy", choices=DECODER_STRATEGIES + ("all",))
        if name == "train-flow":
            p.add_argument("--restart", action="store_true", help="ignore an existing flow checkpoint")
        else:
            p.add_argument("--force", action="store_true", help="retrain even if the stage is complete")
        p.set_defaults(handler=handler)

    p = sub.add_parser("infer", help="segment one video for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("predict", help="predict masks for a whole split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="J, F and J&F of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.add_argument("--aggregation", choices=("clip", "frame"), default="clip")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("eval-codec", help="compare decoder strategies")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--aggregation", choices=("clip", "frame"), default="clip")
    p.set_defaults(handler=cmd_eval_codec)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--grid")
    p.add_argument("--config")
    p.add_argument("--codec", help="run directory holding codec.frvs (default: --out)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ablate)
    return parser


def exit_code_for(error: BaseException) -> int:
    """Код выхода для класса ошибки."""
    if isinstance(error, QueryParseError):
        return EXIT_BAD_QUERY
    if isinstance(error, AlignmentError):
        return EXIT_MISALIGNED
    if isinstance(error, MissingStageError):
        return EXIT_MISSING_STAGE
    if isinstance(error, (ContractError, DatasetIOError, FrvsFormatError, ShapeError, OSError)):
        return EXIT_USAGE
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, env.LOG_LEVEL, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except FlowSegError as e:
        code = exit_code_for(e)
        logger.error(f"[CLI] ❌ {args.command}: {e}")
        return code
    except OSError as e:
        logger.error(f"[CLI] ❌ {args.command}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
