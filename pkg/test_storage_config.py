# test_storage_config.py
"""
Тесты хранения и конфигурации: FRVS, PGM, журнал потерь, чекпоинты,
файл конфигурации, сетка абляций, этапы конвейера, потоки случайных чисел.

Запуск:
    pytest test_storage_config.py
"""
import struct
from dataclasses import replace

import numpy as np
import pytest

from codec.model import init_head
from config import RunConfig, echo_config, load_config, parse_config, serialize_config
from constants import ABLATION_COLUMNS, ABLATION_SUMMARY, ABLATION_TSV, CODEC_CHECKPOINT, FLOW_CHECKPOINT
from errors import ConfigError, DatasetIOError, FrvsFormatError, MissingStageError
from flow.ablation import AblationRow, format_ablation_tsv, parse_grid, run_ablation, summarize_ablation
from numerics.layers import params_digest
from numerics.optim import init_optim_state
from storage.atomic import atomic_write_bytes, read_bytes
from storage.checkpoints import FlowCheckpoint, load_codec, load_flow_checkpoint, save_codec, save_flow_checkpoint
from storage.dataset_io import corpus_digest, parse_record
from storage.frvs import decode_frvs, encode_frvs, read_frvs, write_frvs
from storage.loss_log import read_loss_log, write_loss_log
from storage.pgm import decode_pgm, encode_pgm, read_pgm, write_mask_frames
from utils.seeding import derive_seed, rng_for
from utils.stages import Stages, detect_stage, require_stage
from velocity_net import NetConfig, init_params


# ============================================================================
# FRVS
# ============================================================================

def test_frvs_round_trip():
    tensors = {
        "video": np.random.default_rng(0).random((2, 4, 4, 3)).astype(np.float32),
        "scalar": np.array([3.5], dtype=np.float64),
        "mask": np.eye(3, dtype=np.uint8),
        "flags": np.array([True, False]),
    }
    decoded = decode_frvs(encode_frvs(tensors))
    assert list(decoded) == list(tensors)
    for name in ("video", "scalar", "mask"):
        assert decoded[name].dtype == tensors[name].dtype
        np.testing.assert_array_equal(decoded[name], tensors[name])
    assert decoded["flags"].dtype == np.uint8


def test_frvs_layout():
    payload = encode_frvs({"a": np.array([1.0], dtype=np.float32)})
    assert payload[:4] == b"FRVS"
    assert struct.unpack_from("<II", payload, 4) == (1, 1)
    assert len(payload) == 12 + 2 + 1 + 2 + 4 + 4


@pytest.mark.parametrize("corrupt", [
    lambda p: b"FRVZ" + p[4:],
    lambda p: p[:-3],
    lambda p: p + b"\0",
    lambda p: p[:4] + struct.pack("<I", 9) + p[8:],
    lambda p: p[:6],
])
def test_frvs_rejects_corruption(corrupt):
    payload = encode_frvs({"x": np.arange(4, dtype=np.float32)})
    with pytest.raises(FrvsFormatError):
        decode_frvs(corrupt(payload))


def test_frvs_rejects_dtype():
    with pytest.raises(FrvsFormatError):
        encode_frvs({"x": np.arange(3, dtype=np.int32)})


def test_frvs_file_errors_name_path(tmp_path):
    path = write_frvs(tmp_path / "ok.frvs", {"x": np.zeros(2, dtype=np.float32)})
    assert set(read_frvs(path)) == {"x"}
    atomic_write_bytes(tmp_path / "bad.frvs", b"junk")
    with pytest.raises(FrvsFormatError) as info:
        read_frvs(tmp_path / "bad.frvs")
    assert "bad.frvs" in str(info.value)
    with pytest.raises(DatasetIOError):
        read_frvs(tmp_path / "missing.frvs")
    assert not list(tmp_path.glob("*.tmp"))


# ============================================================================
# PGM и текстовые файлы
# ============================================================================

def test_pgm_round_trip(tmp_path):
    frame = np.zeros((3, 5), dtype=np.uint8)
    frame[1, 2:4] = 1
    payload = encode_pgm(frame)
    assert payload.startswith(b"P5\n5 3\n255\n")
    np.testing.assert_array_equal(decode_pgm(payload), frame * 255)
    paths = write_mask_frames(tmp_path, np.stack([frame, 1 - frame]))
    assert [p.name for p in paths] == ["frame_000.pgm", "frame_001.pgm"]
    np.testing.assert_array_equal(read_pgm(paths[1]), (1 - frame) * 255)


def test_pgm_with_comment():
    payload = b"P5\n# comment\n2 1\n255\n\x00\xff"
    np.testing.assert_array_equal(decode_pgm(payload), [[0, 255]])


@pytest.mark.parametrize("payload", [b"P2\n2 1\n255\n\x00\xff", b"P5\n2 2\n255\n\x00", b"P5\n2"])
def test_pgm_rejects(payload):
    with pytest.raises(FrvsFormatError):
        decode_pgm(payload)


def test_query_record_parsing():
    assert parse_record("kind=circle\n# note\n\ncolor = red\n") == {"kind": "circle", "color": "red"}
    with pytest.raises(ValueError):
        parse_record("kind circle")


def test_loss_log_round_trip(tmp_path):
    path = write_loss_log(tmp_path / "loss.log", [(0, 1.5), (1, 0.25)])
    assert read_bytes(path).decode("utf-8").splitlines()[0].startswith("0\t1.5")
    assert read_loss_log(path) == [(0, 1.5), (1, 0.25)]
    assert read_loss_log(tmp_path / "absent.log") == []


def test_corpus_digest_tracks_content(tmp_path):
    atomic_write_bytes(tmp_path / "a" / "x.bin", b"1")
    atomic_write_bytes(tmp_path / "b" / "x.bin", b"1")
    assert corpus_digest(tmp_path / "a") == corpus_digest(tmp_path / "b")
    atomic_write_bytes(tmp_path / "b" / "x.bin", b"2")
    assert corpus_digest(tmp_path / "a") != corpus_digest(tmp_path / "b")


# ============================================================================
# Конфигурация
# ============================================================================

def test_config_defaults():
    config = load_config(None)
    assert config.paradigm == "video2mask-flow"
    assert config.p_bbs == 0.5 and config.spa and config.dvi
    assert config.ode_steps == 10
    assert config.seed == 0


def test_config_round_trip():
    config = RunConfig(epochs=3, p_bbs=0.25, spa=False, paradigm="onestep-mask", lr=1e-4)
    assert parse_config(serialize_config(config)) == config


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# tiny\nepochs = 2\nspa = off  # comment\ndecoder_strategy = conv-head\n", encoding="utf-8")
    config = load_config(path)
    assert config.epochs == 2 and config.spa is False and config.decoder_strategy == "conv-head"
    echoed = echo_config(config, tmp_path / "run")
    assert parse_config(echoed.read_text(encoding="utf-8")) == config


@pytest.mark.parametrize("text", [
    "colour = red",
    "epochs = 2\nepochs = 3",
    "epochs = two",
    "spa = maybe",
    "p_bbs = 1.5",
    "paradigm = mask2video",
    "height = 30",
    "model_width = 10\nheads = 4",
    "epochs",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_config_replace():
    assert RunConfig().replace(epochs=4).epochs == 4
    with pytest.raises(ConfigError):
        RunConfig().replace(epoch=4)


# ============================================================================
# Чекпоинты
# ============================================================================

def test_codec_checkpoint_round_trip(tmp_path, tiny_codec):
    codec = replace(tiny_codec, head=init_head(np.random.default_rng(0), 4))
    loaded = load_codec(save_codec(tmp_path / CODEC_CHECKPOINT, codec))
    assert loaded.strategies() == ("frozen", "conv-head")
    assert params_digest(loaded.encoder) == params_digest(codec.encoder)
    assert params_digest(loaded.head) == params_digest(codec.head)
    np.testing.assert_array_equal(loaded.mu, codec.mu)
    assert loaded.latent_channels == 4 and loaded.width == 8 and loaded.head_channels == 4
    assert not any(p.requires_grad for p in loaded.decoder.values())


def test_flow_checkpoint_round_trip(tmp_path, tiny_codec, tiny_config):
    params = init_params(NetConfig.from_run_config(tiny_config), 0)
    optim = init_optim_state(params, lr=tiny_config.lr)
    optim.step = 7
    checkpoint = FlowCheckpoint(params, tiny_codec, tiny_config, optim, step=7, epoch=2)
    loaded = load_flow_checkpoint(save_flow_checkpoint(tmp_path / FLOW_CHECKPOINT, checkpoint), trainable=True)
    assert params_digest(loaded.params) == params_digest(params)
    assert all(p.requires_grad for p in loaded.params.values())
    assert loaded.config == tiny_config
    assert (loaded.step, loaded.epoch, loaded.optim.step) == (7, 2, 7)
    assert set(loaded.optim.m) == set(params)


def test_flow_checkpoint_rejects_codec_file(tmp_path, tiny_codec):
    path = save_codec(tmp_path / CODEC_CHECKPOINT, tiny_codec)
    with pytest.raises(FrvsFormatError):
        load_flow_checkpoint(path)


# ============================================================================
# Этапы конвейера
# ============================================================================

def test_stage_detection(tmp_path, tiny_codec, tiny_config):
    assert detect_stage(tmp_path / "absent") is None
    with pytest.raises(MissingStageError) as info:
        require_stage(tmp_path, Stages.CODEC_PRETRAINED)
    assert info.value.stage == Stages.CODEC_PRETRAINED

    save_codec(tmp_path / CODEC_CHECKPOINT, tiny_codec)
    assert detect_stage(tmp_path) == Stages.CODEC_PRETRAINED
    assert require_stage(tmp_path, Stages.CODEC_PRETRAINED).name == CODEC_CHECKPOINT
    with pytest.raises(MissingStageError):
        require_stage(tmp_path, Stages.DECODER_FINETUNED)

    save_codec(tmp_path / CODEC_CHECKPOINT, replace(tiny_codec, head=init_head(np.random.default_rng(0), 4)))
    assert detect_stage(tmp_path) == Stages.DECODER_FINETUNED

    params = init_params(NetConfig.from_run_config(tiny_config), 0)
    save_flow_checkpoint(tmp_path / FLOW_CHECKPOINT, FlowCheckpoint(params, tiny_codec, tiny_config))
    assert detect_stage(tmp_path) == Stages.FLOW_TRAINED
    assert require_stage(tmp_path, Stages.CODEC_PRETRAINED).name == CODEC_CHECKPOINT


def test_flow_checkpoint_without_codec_is_missing_stage(tmp_path, tiny_codec, tiny_config):
    params = init_params(NetConfig.from_run_config(tiny_config), 0)
    save_flow_checkpoint(tmp_path / FLOW_CHECKPOINT, FlowCheckpoint(params, tiny_codec, tiny_config))
    assert detect_stage(tmp_path) == Stages.FLOW_TRAINED
    assert require_stage(tmp_path, Stages.FLOW_TRAINED).name == FLOW_CHECKPOINT
    with pytest.raises(MissingStageError) as info:
        require_stage(tmp_path, Stages.CODEC_PRETRAINED)
    assert info.value.stage == Stages.CODEC_PRETRAINED


# ============================================================================
# Сетка абляций
# ============================================================================

def test_empty_grid_is_default():
    rows, seeds = parse_grid("")
    assert len(rows) == 7
    assert seeds == [0, 1, 2]
    names = [name for name, _ in rows]
    assert names == ["a", "b", "c", "c-base", "e", "g", "h"]
    assert dict(rows)["h"] == {"paradigm": "video2mask-flow", "p_bbs": 0.5, "spa": True, "dvi": True}


def test_full_grid_preset():
    rows, seeds = parse_grid("grid: full\nseeds: 4 5")
    assert len(rows) == 9
    assert seeds == [4, 5]
    assert {cell["p_bbs"] for _, cell in rows} == {0.0, 0.25, 0.5, 0.75}


def test_custom_grid():
    rows, _ = parse_grid("x: paradigm=onestep-velocity\ny: p_bbs=0.75 spa=on dvi=off  # note\n")
    assert rows == [
        ("x", {"paradigm": "onestep-velocity", "p_bbs": 0.0, "spa": False, "dvi": False}),
        ("y", {"paradigm": "video2mask-flow", "p_bbs": 0.75, "spa": True, "dvi": False}),
    ]


@pytest.mark.parametrize("text", [
    "x: p_bbs=0.3",
    "x: lr=1",
    "x: spa=maybe",
    "x: paradigm=other",
    "x: p_bbs=0\nx: p_bbs=0.5",
    "seeds: a b",
    "seeds:",
    "grid: tiny",
    "just words",
])
def test_grid_rejects(text):
    with pytest.raises(ConfigError):
        parse_grid(text)


def test_ablation_reports():
    rows = [
        AblationRow("h", "video2mask-flow", 0.5, True, True, seed, 0.5 + 0.1 * seed, 0.6, 0.55 + 0.05 * seed)
        for seed in (0, 1)
    ]
    lines = format_ablation_tsv(rows).splitlines()
    assert lines[0].split("\t") == list(ABLATION_COLUMNS)
    assert lines[1].split("\t") == ["video2mask-flow", "0.5", "on", "on", "0", "0.500000", "0.600000", "0.550000"]
    summary = summarize_ablation(rows).splitlines()
    assert len(summary) == 2
    assert summary[1].split("\t")[:6] == ["h", "video2mask-flow", "0.5", "on", "on", "2"]
    assert summary[1].split("\t")[8] == "0.5750"


def test_run_ablation_writes_reports(tmp_path, tiny_codec, tiny_samples, tiny_config):
    grid, _ = parse_grid("b: paradigm=onestep-mask\nc: paradigm=onestep-velocity")
    config = tiny_config.replace(decoder_strategy="frozen")
    rows = run_ablation(grid, [0], tiny_samples[:4], tiny_samples[4:], tiny_codec, config, tmp_path)
    assert [(r.name, r.seed) for r in rows] == [("b", 0), ("c", 0)]
    assert all(0.0 <= r.jf <= 1.0 for r in rows)
    assert len(read_bytes(tmp_path / ABLATION_TSV).decode("utf-8").splitlines()) == 3
    assert (tmp_path / ABLATION_SUMMARY).exists()


# ============================================================================
# Потоки случайных чисел
# ============================================================================

def test_rng_streams_are_keyed():
    a = rng_for(0, "batch", 3).random(4)
    np.testing.assert_array_equal(a, rng_for(0, "batch", 3).random(4))
    assert not np.array_equal(a, rng_for(0, "batch", 4).random(4))
    assert not np.array_equal(a, rng_for(1, "batch", 3).random(4))
    assert derive_seed(0, "net") == derive_seed(0, "net")
    assert 0 <= derive_seed(5, "x") < 2 ** 32
