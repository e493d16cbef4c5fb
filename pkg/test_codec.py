# test_codec.py
"""
Тесты латентного кодека: кодирование, нормализация, декодер, потери, обучение.

Запуск:
    pytest test_codec.py
    pytest test_codec.py -m "not slow"
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from codec.losses import dice_loss, focal_loss, kl_divergence, mse
from codec.model import (
    decode,
    decode_logits,
    decode_rgb_logits,
    denormalize_latent,
    encode,
    init_codec,
    init_head,
    init_mask_decoder,
    latent_statistics,
    lift_mask,
    normalize_latent,
    sample_posterior,
)
from codec.training import encode_means, finetune_decoder, pretrain_codec, reconstruct_masks
from errors import ContractError, ShapeError
from numerics import ops
from numerics.gradcheck import grad_check
from numerics.layers import cast_params, merge, params_digest, with_prefix
from numerics.tensor import NdTensor, precision


@pytest.fixture(scope="module")
def codec():
    return init_codec(0, latent_channels=8, width=8, head_channels=4)


def _video(seed: int = 0, frames: int = 2, size: int = 32) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, (frames, size, size, 3)).astype(np.float32)


# ============================================================================
# Кодер
# ============================================================================

def test_encode_dims(codec):
    mean, logvar = encode(_video(frames=8), codec)
    assert mean.dims == (8, 8, 8, 8)
    assert logvar.dims == (8, 8, 8, 8)


def test_encode_is_deterministic(codec):
    a, _ = encode(_video(), codec)
    b, _ = encode(_video(), codec)
    np.testing.assert_array_equal(a.data, b.data)


def test_encode_zero_video_is_finite(codec):
    mean, logvar = encode(np.zeros((2, 32, 32, 3), dtype=np.float32), codec)
    assert np.isfinite(mean.data).all() and np.isfinite(logvar.data).all()


def test_encode_rejects_indivisible_frame(codec):
    with pytest.raises(ShapeError):
        encode(np.zeros((1, 30, 30, 3), dtype=np.float32), codec)


def test_encode_lifts_masks(codec):
    mask = np.zeros((2, 32, 32), dtype=np.uint8)
    mask[:, 8:20, 4:16] = 1
    lifted, _ = encode(lift_mask(mask), codec)
    direct, _ = encode(mask, codec)
    assert direct.dims == (2, 8, 8, 8)
    np.testing.assert_array_equal(direct.data, lifted.data)


def test_encode_means_matches_encode(codec):
    clips = np.stack([_video(1), _video(2)])
    means = encode_means(clips, codec, chunk=3)
    assert means.shape == (2, 2, 8, 8, 8)
    direct, _ = encode(clips[1], codec)
    np.testing.assert_allclose(means[1], direct.data, rtol=1e-6, atol=1e-6)


# ============================================================================
# Нормализация и апостериорная выборка
# ============================================================================

def test_normalize_round_trip():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((3, 4, 4, 5)).astype(np.float32)
    mu = rng.standard_normal(5).astype(np.float32)
    sigma = rng.uniform(0.5, 2.0, 5).astype(np.float32)
    back = denormalize_latent(normalize_latent(z, mu, sigma), mu, sigma)
    np.testing.assert_allclose(back, z, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(normalize_latent(np.broadcast_to(mu, (2, 5)), mu, sigma), 0.0, atol=1e-6)
    as_tensor = normalize_latent(NdTensor(z), mu, sigma)
    np.testing.assert_allclose(as_tensor.data, normalize_latent(z, mu, sigma), rtol=1e-6)


@pytest.mark.parametrize("sigma", [np.array([1.0, 0.0]), np.array([1.0, -2.0]), None])
def test_normalize_rejects_bad_sigma(sigma):
    with pytest.raises(ContractError):
        normalize_latent(np.zeros((2, 2)), np.zeros(2), sigma)


def test_latent_statistics_per_channel():
    rng = np.random.default_rng(1)
    means = rng.normal([1.0, -2.0, 0.0], [0.5, 2.0, 1.0], size=(4000, 3))
    mu, sigma = latent_statistics(means)
    np.testing.assert_allclose(mu, [1.0, -2.0, 0.0], atol=0.1)
    np.testing.assert_allclose(sigma, [0.5, 2.0, 1.0], rtol=0.1)


def test_posterior_floor_returns_mean():
    mean = np.arange(6, dtype=np.float32).reshape(2, 3)
    sample = sample_posterior(mean, np.full((2, 3), -30.0, dtype=np.float32), np.random.default_rng(0))
    np.testing.assert_array_equal(sample, mean)


def test_posterior_variance():
    mean = np.zeros(100_000, dtype=np.float64)
    logvar = np.full_like(mean, math.log(4.0))
    sample = sample_posterior(mean, logvar, np.random.default_rng(0))
    assert sample.var() == pytest.approx(4.0, rel=0.1)


def test_posterior_uses_given_rng():
    mean = np.zeros((3, 3), dtype=np.float32)
    logvar = np.zeros((3, 3), dtype=np.float32)
    a = sample_posterior(mean, logvar, np.random.default_rng(5))
    b = sample_posterior(mean, logvar, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


# ============================================================================
# Декодер
# ============================================================================

def test_decode_dims_and_range(codec):
    z = np.random.default_rng(0).standard_normal((2, 8, 8, 8)).astype(np.float32)
    probs = decode(z, codec, "frozen")
    assert probs.dims == (2, 32, 32)
    assert 0.0 <= probs.data.min() and probs.data.max() <= 1.0


@pytest.mark.parametrize("strategy", ["conv-head", "finetuned", "bilinear"])
def test_decode_rejects_unavailable_strategy(codec, strategy):
    with pytest.raises(ContractError):
        decode(np.zeros((1, 8, 8, 8), dtype=np.float32), codec, strategy)


def test_decode_rejects_channel_mismatch(codec):
    with pytest.raises(ShapeError):
        decode(np.zeros((1, 8, 8, 3), dtype=np.float32), codec, "frozen")


def test_untrained_head_matches_frozen(codec):
    with_head = replace(codec, head=init_head(np.random.default_rng(0), 4))
    z = np.random.default_rng(1).standard_normal((1, 8, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(decode(z, with_head, "conv-head").data, decode(z, codec, "frozen").data, atol=1e-6)
    assert with_head.strategies() == ("frozen", "conv-head")


def test_frozen_logits_are_rgb_channel_mean(codec):
    z = np.random.default_rng(2).standard_normal((2, 8, 8, 8)).astype(np.float32)
    rgb = decode_rgb_logits(z, codec).data
    np.testing.assert_allclose(decode_logits(z, codec, "frozen").data, rgb.mean(axis=-1), atol=1e-6)


def test_mask_decoder_emits_one_channel(codec):
    mask_decoder = init_mask_decoder(codec.decoder)
    assert mask_decoder["finetuned.out.w"].dims[-1] == 1
    assert mask_decoder["finetuned.out.b"].dims == (1,)
    assert all(name.startswith("finetuned.") for name in mask_decoder)
    assert set(codec.decoder) == {"dec" + name[len("finetuned"):] for name in mask_decoder}


def test_untrained_mask_decoder_matches_frozen(codec):
    with_decoder = replace(codec, finetuned=init_mask_decoder(codec.decoder))
    z = np.random.default_rng(3).standard_normal((1, 8, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(decode(z, with_decoder, "finetuned").data, decode(z, codec, "frozen").data, atol=1e-5)


def test_finetuned_rejects_rgb_decoder(codec):
    rgb_copy = {"finetuned" + name[len("dec"):]: p for name, p in codec.decoder.items()}
    with pytest.raises(ShapeError):
        decode(np.zeros((1, 8, 8, 8), dtype=np.float32), replace(codec, finetuned=rgb_copy), "finetuned")


# ============================================================================
# Потери
# ============================================================================

def test_focal_vanishes_for_confident_correct():
    loss = focal_loss(NdTensor(np.full((4, 4), 30.0)), np.ones((4, 4)))
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_focal_at_half():
    loss = focal_loss(NdTensor(np.zeros((4, 4))), np.ones((4, 4)))
    assert loss.item() == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-6)
    assert loss.item() == pytest.approx(0.04332, abs=1e-5)


def test_dice_bounds():
    target = np.zeros((1, 10, 10))
    target[0, :, :] = 1
    assert dice_loss(NdTensor(target.copy()), target).item() == pytest.approx(0.0, abs=1e-12)
    assert dice_loss(NdTensor(np.zeros((1, 10, 10))), target).item() == pytest.approx(1.0, abs=0.02)


def test_kl_zero_at_prior():
    assert kl_divergence(NdTensor(np.zeros(5)), NdTensor(np.zeros(5))).item() == pytest.approx(0.0)


def test_codec_gradients_64bit():
    with precision("float64"):
        small = init_codec(3, latent_channels=2, width=4)
        params = merge(small.encoder, small.decoder)
        x = np.random.default_rng(0).uniform(0.0, 1.0, (1, 8, 8, 3))

        def net(p, inputs):
            view = replace(small, encoder=with_prefix(p, "enc."), decoder=with_prefix(p, "dec."))
            mean, logvar = encode(NdTensor(inputs), view)
            recon = mse(ops.sigmoid(decode_rgb_logits(mean, view)), inputs)
            return ops.add(recon, kl_divergence(mean, logvar))

        report = grad_check(net, params, x, tolerance=1e-5, directions=10)
    assert report.passed, report.max_rel_error


def test_codec_gradients_32bit():
    with precision("float64"):
        small = init_codec(4, latent_channels=2, width=4)
    params = cast_params(merge(small.encoder, small.decoder), np.float32)
    assert all(p.data.dtype == np.float32 for p in params.values())
    x = np.random.default_rng(1).uniform(0.0, 1.0, (1, 8, 8, 3)).astype(np.float32)

    def net(p, inputs):
        view = replace(small, encoder=with_prefix(p, "enc."), decoder=with_prefix(p, "dec."))
        mean, logvar = encode(NdTensor(inputs), view)
        recon = mse(ops.sigmoid(decode_rgb_logits(mean, view)), inputs)
        return ops.add(recon, kl_divergence(mean, logvar))

    report = grad_check(net, params, x, tolerance=1e-3, directions=10)
    assert report.passed, report.max_rel_error


# ============================================================================
# Обучение
# ============================================================================

def _masks(samples) -> np.ndarray:
    return np.stack([s.mask for s in samples])


def test_finetune_rejects_frozen(tiny_codec, tiny_samples, tiny_config):
    with pytest.raises(ContractError):
        finetune_decoder(tiny_codec, _masks(tiny_samples), "frozen", tiny_config)
    with pytest.raises(ContractError):
        finetune_decoder(tiny_codec, _masks(tiny_samples), "nearest", tiny_config)


@pytest.mark.parametrize("strategy", ["conv-head", "finetuned"])
def test_finetune_keeps_encoder(tiny_codec, tiny_samples, tiny_config, strategy):
    encoder_before = params_digest(tiny_codec.encoder)
    decoder_before = params_digest(tiny_codec.decoder)
    result = finetune_decoder(tiny_codec, _masks(tiny_samples), strategy, tiny_config)
    assert params_digest(result.codec.encoder) == encoder_before
    assert params_digest(result.codec.decoder) == decoder_before
    assert strategy in result.codec.strategies()
    assert all(np.isfinite(v) for v in result.step_losses)
    recon = reconstruct_masks(result.codec, _masks(tiny_samples), strategy)
    assert recon.shape == _masks(tiny_samples).shape and recon.dtype == np.uint8


def test_pretrain_rejects_empty(tiny_config):
    with pytest.raises(ContractError):
        pretrain_codec(np.zeros((0, 2, 24, 24, 3), dtype=np.float32), tiny_config)


@pytest.mark.slow
def test_pretrain_reduces_reconstruction(tiny_samples, tiny_config):
    videos = np.stack([s.video for s in tiny_samples])
    config = tiny_config.replace(codec_epochs=3, codec_batch=2)
    result = pretrain_codec(videos, config)
    assert result.epoch_losses[-1] < result.epoch_losses[0]
    codec = result.codec
    assert codec.has_constants()
    assert not any(p.requires_grad for p in codec.encoder.values())
    normalized = normalize_latent(encode_means(videos, codec), codec.mu, codec.sigma)
    np.testing.assert_allclose(normalized.reshape(-1, 4).mean(axis=0), 0.0, atol=1e-3)
