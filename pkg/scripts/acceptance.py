# scripts/acceptance.py
"""
Длительные приёмочные прогоны (обучение кодека и потока на полном наборе).

Запуск из корня репозитория:

    python -m scripts.acceptance --out runs/acceptance              # все проверки
    python -m scripts.acceptance --out runs/acceptance --only codec-trend oracle  # выбранные
    python -m scripts.acceptance --out runs/acceptance --small      # уменьшенный масштаб

Каждая проверка печатает PASS/FAIL и измеренные значения; код выхода 1,
если хотя бы одна проверка не прошла.
"""
import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

import config as env
from codec.model import CodecParams
from codec.training import finetune_decoder, pretrain_codec, reconstruction_report
from config import RunConfig
from constants import DEFAULT_GRID, LOSS_LOG, STRATEGY_CONV_HEAD, STRATEGY_FINETUNED, STRATEGY_FROZEN
from flow.ablation import run_ablation
from flow.engine import FlowConfig, LatentCache, infer_batch, oracle_for
from flow.training import train_flow
from metrics import evaluate_split, format_eval_tsv
from shapes.dataset import Sample, generate_dataset, load_split, paired_indices
from storage.atomic import read_bytes
from storage.checkpoints import load_codec, save_codec
from utils.progress import progress_bar

logger = logging.getLogger(__name__)


@dataclass
class Scale:
    train: int
    val: int
    epochs: int
    ablation_train: int
    ablation_val: int
    ablation_epochs: int


FULL = Scale(train=2000, val=200, epochs=10, ablation_train=1000, ablation_val=100, ablation_epochs=5)
SMALL = Scale(train=200, val=40, epochs=2, ablation_train=100, ablation_val=20, ablation_epochs=1)


@dataclass
class Outcome:
    passed: bool
    detail: str


class Harness:
    """Общие данные и кодек для всех проверок одного запуска."""

    def __init__(self, out: Path, scale: Scale, seed: int = 0):
        self.out = out
        self.scale = scale
        self.config = RunConfig(data_dir=str(out / "data"), epochs=scale.epochs, seed=seed)
        self._codec: Optional[CodecParams] = None
        self._flow = None
        self._train: Optional[List[Sample]] = None
        self._val: Optional[List[Sample]] = None

    def data(self):
        if self._train is None:
            root = Path(self.config.data_dir)
            for split, n in (("train", self.scale.train), ("val", self.scale.val)):
                if not (root / split).is_dir():
                    generate_dataset(root, n, self.config.seed, split)
            self._train = load_split(root, "train", self.scale.train)
            self._val = load_split(root, "val", self.scale.val)
        return self._train, self._val

    def codec(self) -> CodecParams:
        if self._codec is None:
            path = self.out / "codec.frvs"
            if path.exists():
                self._codec = load_codec(path)
            else:
                train, _ = self.data()
                codec = pretrain_codec(np.stack([s.video for s in train]), self.config).codec
                masks = np.stack([s.mask for s in train])
                for strategy in (STRATEGY_CONV_HEAD, STRATEGY_FINETUNED):
                    codec = finetune_decoder(codec, masks, strategy, self.config).codec
                save_codec(path, codec)
                self._codec = codec
        return self._codec

    def flow(self):
        if self._flow is None:
            train, val = self.data()
            self._flow = train_flow(train, self.codec(), self.config, run_dir=self.out / "flow", val_samples=val)
        return self._flow


def _scores(harness: Harness, net, config: RunConfig, samples: List[Sample]):
    predictions = infer_batch(samples, net, harness.codec(), FlowConfig.from_run_config(config))
    return evaluate_split([p.mask for p in predictions], [s.mask for s in samples], pairs=paired_indices(samples))


# ============================================================================
# Проверки
# ============================================================================

def check_codec_trend(h: Harness) -> Outcome:
    _, val = h.data()
    report = reconstruction_report(h.codec(), [s.mask for s in val])
    frozen, head, tuned = (report[s].mean_jf for s in (STRATEGY_FROZEN, STRATEGY_CONV_HEAD, STRATEGY_FINETUNED))
    ok = tuned > head > frozen and tuned >= 0.95 and frozen <= 0.80 * tuned
    return Outcome(ok, f"frozen {frozen:.4f}  conv-head {head:.4f}  finetuned {tuned:.4f}")


def check_end_to_end(h: Harness) -> Outcome:
    result = h.flow()
    score = result.val_scores[-1]
    return Outcome(score >= 0.60, f"val J&F {score:.4f} after {len(result.val_scores)} epochs")


def check_ablation_trends(h: Harness) -> Outcome:
    train, val = h.data()
    config = h.config.replace(epochs=h.scale.ablation_epochs)
    rows = run_ablation(DEFAULT_GRID, [0, 1, 2], train[:h.scale.ablation_train], val[:h.scale.ablation_val],
                        h.codec(), config, out_dir=h.out / "ablation")
    mean: Dict[str, float] = {}
    for name, _ in DEFAULT_GRID:
        mean[name] = float(np.mean([r.jf for r in rows if r.name == name]))
    checks = {
        "bbs": mean["e"] >= mean["c-base"] + 0.03,
        "onestep": mean["c"] > mean["b"],
        "noise": mean["a"] < mean["h"],
        "dvi": mean["h"] >= mean["g"],
    }
    detail = "  ".join(f"{k}={v:.4f}" for k, v in mean.items()) + "  " + str(checks)
    return Outcome(all(checks.values()), detail)


def check_oracle_ceiling(h: Harness) -> Outcome:
    _, val = h.data()
    codec = h.codec()
    ceiling = reconstruction_report(codec, [s.mask for s in val], [STRATEGY_FINETUNED])[STRATEGY_FINETUNED].mean_jf
    latents = LatentCache(codec).get(val)
    parts = []
    ok = True
    for steps in (1, 10, 50):
        config = h.config.replace(ode_steps=steps)
        flow_config = FlowConfig.from_run_config(config)
        masks = []
        for sample, item in zip(progress_bar(val, f"oracle N={steps}"), latents):
            oracle = oracle_for(flow_config.paradigm, item.mask_latent[None])
            masks.append(infer_batch([sample], oracle, codec, flow_config)[0].mask)
        score = evaluate_split(masks, [s.mask for s in val]).mean_jf
        ok &= abs(score - ceiling) <= 0.01
        parts.append(f"N={steps}: {score:.4f}")
    return Outcome(ok, f"ceiling {ceiling:.4f}  " + "  ".join(parts))


def check_disambiguation(h: Harness) -> Outcome:
    _, val = h.data()
    scores = _scores(h, h.flow().net, h.config, val)
    if scores.paired_rate is None:
        return Outcome(False, "no paired queries in the validation split")
    return Outcome(scores.paired_rate >= 0.85, f"paired rate {scores.paired_rate:.4f} over {scores.pairs} pairs")


def check_reproducibility(h: Harness) -> Outcome:
    train, val = h.data()
    config = h.config.replace(epochs=1)
    subset = train[:10 * config.batch_size]
    outputs = []
    for run in ("repro_a", "repro_b"):
        result = train_flow(subset, h.codec(), config, run_dir=h.out / run, resume=False)
        tsv = format_eval_tsv(_scores(h, result.net, config, val))
        outputs.append((read_bytes(result.checkpoint), read_bytes(h.out / run / LOSS_LOG), tsv))
    same = [a == b for a, b in zip(*outputs)]
    return Outcome(all(same), f"checkpoint {same[0]}  loss log {same[1]}  eval tsv {same[2]}")


CHECKS: Dict[str, Callable[[Harness], Outcome]] = {
    "codec-trend": check_codec_trend,
    "end-to-end": check_end_to_end,
    "ablation": check_ablation_trends,
    "oracle": check_oracle_ceiling,
    "disambiguation": check_disambiguation,
    "reproducibility": check_reproducibility,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, env.LOG_LEVEL, logging.INFO))
    parser = argparse.ArgumentParser(description="long-running acceptance checks")
    parser.add_argument("--out", required=True)
    parser.add_argument("--only", nargs="*", choices=list(CHECKS))
    parser.add_argument("--small", action="store_true", help="reduced scale for a smoke run")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    harness = Harness(Path(args.out), SMALL if args.small else FULL, args.seed)
    failed = 0
    for name in args.only or list(CHECKS):
        outcome = CHECKS[name](harness)
        status = "PASS" if outcome.passed else "FAIL"
        failed += not outcome.passed
        print(f"[{status}] {name}: {outcome.detail}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
