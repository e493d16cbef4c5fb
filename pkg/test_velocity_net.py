# test_velocity_net.py
"""
Тесты сети поля скорости: формы, условие, время, градиенты.

Запуск:
    pytest test_velocity_net.py
"""
import numpy as np
import pytest

from errors import ContractError, ShapeError
from numerics import ops
from numerics.gradcheck import grad_check
from numerics.layers import make_params, param_count
from numerics.optim import grads_by_name
from numerics.tensor import backward, new_tape, precision
from shapes.query import QuerySpec
from velocity_net import NetConfig, forward, init_params, modulation_params, timestep_features

SMALL = NetConfig(width=16, blocks=1, heads=2, in_channels=8, out_channels=4, time_features=8,
                  mlp_ratio=2, frames=2, latent_height=4, latent_width=4)


@pytest.fixture(scope="module")
def params():
    return init_params(SMALL, 0)


def _latent(seed: int, batch=None, channels: int = 8) -> np.ndarray:
    dims = (2, 4, 4, channels) if batch is None else (batch, 2, 4, 4, channels)
    return np.random.default_rng(seed).standard_normal(dims).astype(np.float32)


SMALLER = QuerySpec("circle", "smaller").token_ids
BIGGER = QuerySpec("circle", "bigger").token_ids


def test_forward_dims(params):
    assert forward(params, _latent(0), SMALLER, 0.3, SMALL).dims == (2, 4, 4, 4)
    batched = forward(params, _latent(0, batch=3), np.stack([SMALLER] * 3), np.array([0.0, 0.5, 1.0]), SMALL)
    assert batched.dims == (3, 2, 4, 4, 4)


def test_forward_rejects_wrong_channels(params):
    with pytest.raises(ShapeError) as info:
        forward(params, _latent(0, channels=4), SMALLER, 0.0, SMALL)
    assert "8" in str(info.value)


def test_forward_rejects_timestep_outside_unit_interval(params):
    with pytest.raises(ContractError):
        forward(params, _latent(0), SMALLER, 1.5, SMALL)


def test_net_config_validation():
    with pytest.raises(ContractError):
        NetConfig(width=10, heads=4)
    with pytest.raises(ContractError):
        NetConfig(latent_height=5)


def test_forward_is_deterministic(params):
    a = forward(params, _latent(1), SMALLER, 0.2, SMALL)
    b = forward(init_params(SMALL, 0), _latent(1), SMALLER, 0.2, SMALL)
    np.testing.assert_array_equal(a.data, b.data)


def test_query_changes_output(params):
    a = forward(params, _latent(2), SMALLER, 0.0, SMALL)
    b = forward(params, _latent(2), BIGGER, 0.0, SMALL)
    assert np.abs(a.data - b.data).max() > 0.0


def test_modulation_starts_at_zero(params):
    names = modulation_params(params)
    assert names
    assert all(not params[name].data.any() for name in names)
    early = forward(params, _latent(3), SMALLER, 0.0, SMALL)
    late = forward(params, _latent(3), SMALLER, 0.9, SMALL)
    np.testing.assert_array_equal(early.data, late.data)


def test_timestep_features():
    feats = timestep_features(np.array([0.0, 0.1, 0.5]), 8)
    np.testing.assert_allclose(feats[0], [1, 1, 1, 1, 0, 0, 0, 0])
    assert not np.allclose(feats[1], feats[2])


def test_default_size_is_desk_scale():
    assert param_count(init_params(NetConfig(), 0)) < 3_000_000


def test_slot_order_does_not_matter(params):
    ids = QuerySpec("triangle", "faster", "red", "left").token_ids
    shuffled = ids[np.random.default_rng(0).permutation(len(ids))]
    a = forward(params, _latent(4), ids, 0.4, SMALL)
    b = forward(params, _latent(4), shuffled, 0.4, SMALL)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-5, atol=1e-6)


def test_every_parameter_receives_gradient(params):
    with new_tape():
        loss = ops.sum(ops.mul(forward(params, _latent(5), SMALLER, 0.5, SMALL), 1.0))
        grads = backward(loss)
    by_name = grads_by_name(params, grads)
    assert set(by_name) == set(params)
    table_grad = by_name["cond.table"]
    used = np.unique(SMALLER)
    assert np.abs(table_grad[used]).sum() > 0.0
    unused = np.setdiff1d(np.arange(table_grad.shape[0]), used)
    assert not table_grad[unused].any()


def test_gradients_64bit_with_live_modulation():
    config = NetConfig(width=8, blocks=1, heads=2, in_channels=4, out_channels=4, time_features=4,
                       mlp_ratio=2, frames=1, latent_height=4, latent_width=4)
    with precision("float64"):
        base = init_params(config, 1)
        rng = np.random.default_rng(2)
        arrays = {name: p.data for name, p in base.items()}
        for name in modulation_params(base):
            arrays[name] = rng.standard_normal(arrays[name].shape) * 0.1
        params = make_params(arrays)
        z = rng.standard_normal((2, 1, 4, 4, 4))
        ids = np.stack([SMALLER, BIGGER])
        t = np.array([0.25, 0.75])
        report = grad_check(lambda p, inp: forward(p, inp[0], inp[1], inp[2], config), params, (z, ids, t),
                            tolerance=1e-5, directions=10)
    assert report.passed, report.max_rel_error
