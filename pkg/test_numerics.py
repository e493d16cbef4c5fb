# test_numerics.py
"""
Тесты вычислительного ядра: операции, лента градиентов, AdamW, grad_check.

Запуск:
    pytest test_numerics.py
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from errors import ContractError, NumericError, ShapeError
from numerics import ops
from numerics.gradcheck import grad_check
from numerics.layers import linear, make_params, params_digest
from numerics.optim import adamw_step, grads_by_name, init_optim_state, learning_rate
from numerics.tensor import NdTensor, backward, default_dtype, new_tape, no_grad, precision, record_op, tensor
from numerics.ops import forward_op


def _leaf(values, dtype=np.float32):
    return NdTensor(np.asarray(values, dtype=dtype), requires_grad=True)


# ============================================================================
# Прямые операции
# ============================================================================

def test_add_elementwise():
    out = forward_op("add", tensor([1.0, 2.0]), tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_matmul_identity():
    a = np.random.default_rng(0).standard_normal((3, 3)).astype(np.float32)
    out = forward_op("matmul", tensor(np.eye(3)), tensor(a))
    np.testing.assert_allclose(out.data, a, rtol=0, atol=1e-7)


def test_softmax_uniform():
    out = forward_op("softmax", tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=1e-6)


def test_shape_error_names_op_and_dims():
    with pytest.raises(ShapeError) as info:
        ops.add(tensor(np.zeros((2, 3))), tensor(np.zeros((4, 3))))
    message = str(info.value)
    assert "add" in message
    assert "[2, 3]" in message and "[4, 3]" in message


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ops.matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))


def test_non_finite_input_raises():
    with pytest.raises(NumericError):
        ops.relu(tensor([1.0, np.nan]))


def test_unknown_op_kind():
    with pytest.raises(ContractError):
        forward_op("cosine", tensor([1.0]))


def test_conv_shapes():
    x = tensor(np.zeros((1, 8, 8, 3)))
    w = tensor(np.zeros((3, 3, 3, 5)))
    assert ops.conv2d(x, w).dims == (1, 8, 8, 5)
    assert ops.conv2d(x, w, stride=2).dims == (1, 4, 4, 5)
    assert ops.conv2d(x, w, padding="valid").dims == (1, 6, 6, 5)
    up = tensor(np.zeros((4, 4, 5, 2)))
    assert ops.conv_transpose2d(ops.conv2d(x, w, stride=2), up).dims == (1, 8, 8, 2)


def test_embedding_out_of_vocabulary():
    with pytest.raises(ContractError):
        ops.embedding(tensor(np.zeros((4, 2))), np.array([0, 4]))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)))
def test_reshape_slice_concat_preserve_values(values):
    x = NdTensor(values)
    flat = ops.reshape(x, (-1,))
    back = ops.reshape(flat, values.shape)
    np.testing.assert_array_equal(back.data, values)
    parts = [x[:, :1], x[:, 1:]]
    np.testing.assert_array_equal(ops.concat(parts, axis=1).data, values)


# ============================================================================
# Обратный проход
# ============================================================================

def test_backward_square_sum():
    x = _leaf([1.0, 2.0, 3.0])
    with new_tape():
        grads = backward(ops.sum(ops.mul(x, x)))
    np.testing.assert_allclose(grads[x], [2.0, 4.0, 6.0])


def test_backward_sigmoid_at_zero():
    x = _leaf([0.0])
    with new_tape():
        grads = backward(ops.sum(ops.sigmoid(x)))
    assert grads[x][0] == pytest.approx(0.25)


def test_backward_requires_scalar():
    x = _leaf([1.0, 2.0])
    with new_tape():
        with pytest.raises(ContractError):
            backward(ops.mul(x, 2.0))


def test_tape_is_consumed():
    x = _leaf([1.0])
    with new_tape():
        loss = ops.sum(ops.mul(x, x))
        backward(loss)
        with pytest.raises(ContractError):
            backward(loss)


def test_frozen_leaves_receive_no_gradient():
    x = _leaf([1.0, 2.0])
    c = NdTensor(np.array([3.0, 4.0], dtype=np.float32))
    with new_tape():
        grads = backward(ops.sum(ops.mul(x, c)))
    assert c not in grads
    np.testing.assert_allclose(grads[x], [3.0, 4.0])


def test_no_grad_records_nothing():
    x = _leaf([1.0])
    with new_tape() as tape, no_grad():
        out = ops.mul(x, x)
        assert len(tape) == 0
        assert not out.requires_grad


def test_backward_linearity():
    rng = np.random.default_rng(1)
    x = _leaf(rng.standard_normal(5), np.float64)
    w = rng.standard_normal(5)

    def first():
        return ops.sum(ops.mul(ops.tanh(x), w))

    def second():
        return ops.mean(ops.mul(x, x))

    with new_tape():
        g_sum = backward(ops.add(first(), second()))[x]
    with new_tape():
        g1 = backward(first())[x]
    with new_tape():
        g2 = backward(second())[x]
    np.testing.assert_allclose(g_sum, g1 + g2, rtol=1e-12)


def test_shared_subexpression_accumulates():
    x = _leaf([2.0])
    with new_tape():
        y = ops.mul(x, 3.0)
        grads = backward(ops.sum(ops.add(y, y)))
    assert grads[x][0] == pytest.approx(6.0)


def test_precision_context_restores_dtype():
    assert default_dtype() == np.float32
    with precision("float64"):
        assert tensor([1.0]).dtype == np.float64
    assert default_dtype() == np.float32
    with pytest.raises(ContractError):
        with precision("float16"):
            pass


# ============================================================================
# Проверка градиентов
# ============================================================================

def _two_layer(seed: int, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = make_params({
        "w1": rng.standard_normal((6, 8)).astype(dtype) * 0.5,
        "b1": np.zeros(8, dtype=dtype),
        "w2": rng.standard_normal((8, 3)).astype(dtype) * 0.5,
    })
    x = rng.standard_normal((4, 6)).astype(dtype)

    def net(p, inputs):
        h = ops.tanh(linear(NdTensor(inputs), p["w1"], p["b1"]))
        return linear(h, p["w2"])

    return net, params, x


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_two_layer_net(seed):
    net, params, x = _two_layer(seed)
    report = grad_check(net, params, x, tolerance=1e-3, directions=20, seed=seed)
    assert report.passed, report.max_rel_error


def test_grad_check_linear_64bit():
    with precision("float64"):
        rng = np.random.default_rng(3)
        params = make_params({"w": rng.standard_normal((5, 2)), "b": rng.standard_normal(2)})
        x = rng.standard_normal((3, 5))
        report = grad_check(lambda p, inp: linear(NdTensor(inp), p["w"], p["b"]), params, x, tolerance=1e-6)
    assert report.passed, report.max_rel_error


def test_grad_check_detects_wrong_rule():
    def bad_square(x: NdTensor) -> NdTensor:
        return record_op("bad-square", x.data * x.data, (x,), lambda g: (3.0 * g * x.data,))

    params = make_params({"x": np.random.default_rng(0).standard_normal(6).astype(np.float32)})
    report = grad_check(lambda p, _: ops.sum(bad_square(p["x"])), params, None, tolerance=1e-3)
    assert not report.passed


def _scaled_square(scale: float, rule_error: float):
    def op(x: NdTensor) -> NdTensor:
        return record_op("scaled-square", scale * x.data * x.data, (x,),
                         lambda g: ((1.0 + rule_error) * 2.0 * scale * g * x.data,))

    return lambda p, _: ops.sum(op(p["x"]))


# на 90000 параметрах производная по направлению много меньше нормы градиента
@pytest.mark.parametrize("scale, size", [(1.0, 6), (1e-6, 6), (1.0, 90_000)])
def test_grad_check_error_does_not_depend_on_gradient_scale(scale, size):
    with precision("float64"):
        params = make_params({"x": np.random.default_rng(4).standard_normal(size)})
        # квадратичная потеря: центральная разность точна при любом шаге
        wrong = grad_check(_scaled_square(scale, 0.01), params, None, tolerance=1e-3, step=1e-3)
        right = grad_check(_scaled_square(scale, 0.0), params, None, tolerance=1e-5, step=1e-3)
    assert not wrong.passed
    assert wrong.max_rel_error == pytest.approx(0.01 / 1.01, rel=1e-3)
    assert right.passed, right.max_rel_error


def test_grad_check_rejects_large_nets():
    params = make_params({"w": np.zeros((400, 400), dtype=np.float32)})
    with pytest.raises(ContractError):
        grad_check(lambda p, _: ops.sum(p["w"]), params, None)


_UNARY = {
    "relu": ops.relu,
    "gelu": ops.gelu,
    "silu": ops.silu,
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
    "log_sigmoid": ops.log_sigmoid,
    "softmax": ops.softmax,
    "layer-norm": ops.layer_norm,
    "exp": ops.exp,
    "mean": lambda x: ops.mean(x, axis=-1),
    "sum": lambda x: ops.sum(x, axis=0),
    "transpose": lambda x: ops.transpose(x, (1, 0)),
    "slice": lambda x: x[1:, ::2],
    "log": lambda x: ops.log(ops.add(ops.mul(x, x), 1.0)),
}


@pytest.mark.parametrize("kind", sorted(_UNARY))
def test_unary_op_gradients(kind):
    for trial in range(10):
        rng = np.random.default_rng(trial)
        # вдали от излома relu
        x = rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.2, 2.0, (3, 4))
        params = make_params({"x": x.astype(np.float32)})
        report = grad_check(lambda p, _: _UNARY[kind](p["x"]), params, None, tolerance=1e-3, directions=5,
                            seed=trial)
        assert report.passed, (kind, trial, report.max_rel_error)


@pytest.mark.parametrize("kind", ["add", "sub", "mul", "div", "matmul", "concat"])
def test_binary_op_gradients(kind):
    rng = np.random.default_rng(7)
    params = make_params({
        "a": rng.standard_normal((3, 3)).astype(np.float32),
        "b": (rng.uniform(0.5, 1.5, (3, 3)) * rng.choice([-1, 1], (3, 3))).astype(np.float32),
    })
    fn = {
        "add": lambda p: ops.add(p["a"], p["b"]),
        "sub": lambda p: ops.sub(p["a"], p["b"]),
        "mul": lambda p: ops.mul(p["a"], p["b"]),
        "div": lambda p: ops.div(p["a"], p["b"]),
        "matmul": lambda p: ops.matmul(p["a"], p["b"]),
        "concat": lambda p: ops.concat([p["a"], p["b"]], axis=0),
    }[kind]
    report = grad_check(lambda p, _: fn(p), params, None, tolerance=1e-3)
    assert report.passed, report.max_rel_error


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid")])
def test_conv2d_gradients(stride, padding):
    rng = np.random.default_rng(stride)
    params = make_params({
        "x": rng.standard_normal((2, 6, 6, 2)).astype(np.float32),
        "w": rng.standard_normal((3, 3, 2, 3)).astype(np.float32) * 0.3,
        "b": rng.standard_normal(3).astype(np.float32),
    })
    report = grad_check(lambda p, _: ops.conv2d(p["x"], p["w"], p["b"], stride=stride, padding=padding),
                        params, None, tolerance=1e-3)
    assert report.passed, report.max_rel_error


def test_transposed_conv_gradients():
    rng = np.random.default_rng(5)
    params = make_params({
        "x": rng.standard_normal((1, 3, 3, 2)).astype(np.float32),
        "w": rng.standard_normal((4, 4, 2, 2)).astype(np.float32) * 0.3,
        "b": rng.standard_normal(2).astype(np.float32),
    })
    report = grad_check(lambda p, _: ops.conv_transpose2d(p["x"], p["w"], p["b"]), params, None, tolerance=1e-3)
    assert report.passed, report.max_rel_error


def test_embedding_gradient_accumulates_repeats():
    table = _leaf(np.ones((4, 2)))
    with new_tape():
        grads = backward(ops.sum(ops.embedding(table, np.array([1, 1, 3]))))
    np.testing.assert_array_equal(grads[table], [[0, 0], [2, 2], [0, 0], [1, 1]])


# ============================================================================
# AdamW
# ============================================================================

def test_adamw_zero_gradient_no_decay_keeps_params():
    params = make_params({"w": np.array([1.0, -2.0], dtype=np.float32)})
    state = init_optim_state(params, lr=0.1, weight_decay=0.0)
    updated, _ = adamw_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(updated["w"].data, params["w"].data)


def test_adamw_first_step_closed_form():
    params = make_params({"w": np.array([0.5], dtype=np.float64)})
    state = init_optim_state(params, lr=0.1, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8)
    updated, state = adamw_step(params, {"w": np.array([1.0])}, state)
    assert updated["w"].data[0] - 0.5 == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-9)
    assert state.step == 1


def test_adamw_decoupled_decay():
    params = make_params({"w": np.array([2.0, -4.0], dtype=np.float64)})
    state = init_optim_state(params, lr=0.1, weight_decay=0.5)
    updated, _ = adamw_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_allclose(updated["w"].data, params["w"].data * 0.95, rtol=1e-12)


def test_adamw_state_invariants_and_determinism():
    rng = np.random.default_rng(0)
    values = {"w": rng.standard_normal((3, 2)).astype(np.float32), "b": np.zeros(2, dtype=np.float32)}
    grads = {"w": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
    digests = []
    for _ in range(2):
        params = make_params(values)
        state = init_optim_state(params)
        for expected_step in (1, 2, 3):
            params, state = adamw_step(params, grads, state)
            assert state.step == expected_step
        assert all(state.m[name].shape == params[name].dims for name in params)
        assert all(state.v[name].shape == params[name].dims for name in params)
        digests.append(params_digest(params))
    assert digests[0] == digests[1]


def test_adamw_missing_gradient():
    params = make_params({"w": np.zeros(2, dtype=np.float32), "b": np.zeros(1, dtype=np.float32)})
    with pytest.raises(ContractError):
        adamw_step(params, {"w": np.zeros(2)}, init_optim_state(params))
    with pytest.raises(ContractError):
        grads_by_name(params, {})


def test_learning_rate_warmup():
    assert learning_rate(1e-3, 0) == 1e-3
    assert learning_rate(1e-3, 0, warmup_steps=4) == pytest.approx(2.5e-4)
    assert learning_rate(1e-3, 10, warmup_steps=4) == 1e-3
