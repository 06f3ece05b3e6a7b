import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from curionav import tensor as T
from curionav.errors import ContractError, DimensionError, NumericError
from curionav.tensor import Tensor


def _scalar(fn):
    return lambda x: T.tsum(fn(x))


UNARY = {
    "square": T.square,
    "exp": T.exp,
    "tanh": T.tanh,
    "gelu": T.gelu,
    "log_softmax": T.log_softmax,
    "transpose": lambda x: T.mul(T.transpose(x), np.arange(12.0).reshape(4, 3)),
    "reshape": lambda x: T.mul(T.reshape(x, (2, 6)), np.arange(12.0).reshape(2, 6)),
    "clip": lambda x: T.clip(x, -0.5, 0.5),
    "softmax_weighted": lambda x: T.mul(T.softmax(x), np.arange(12.0).reshape(3, 4)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    x = rng.standard_normal((3, 4))
    # keep clip samples away from the kinks
    if name == "clip":
        x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, x + 0.2, x)
    assert T.grad_check(_scalar(UNARY[name]), x) < 1e-6


def test_log_gradient(rng):
    x = rng.uniform(0.5, 2.0, (3, 3))
    assert T.grad_check(_scalar(T.log), x) < 1e-6


def test_binary_and_matmul_gradients(rng):
    b = rng.standard_normal((4, 2))
    with T.precision(np.float64):
        bt = Tensor(b)
        assert T.grad_check(lambda x: T.tsum(T.matmul(x, bt)), rng.standard_normal((3, 4))) < 1e-6
        assert T.grad_check(lambda x: T.tsum(T.mul(T.mul(x, x), T.exp(-x))), rng.standard_normal(5)) < 1e-6
        assert T.grad_check(lambda x: T.tsum(T.minimum(x, 0.3 * x + 0.1)), rng.standard_normal(6) + 2.0) < 1e-6


def test_broadcast_gradient_unbroadcasts(rng):
    with T.precision(np.float64):
        big = Tensor(rng.standard_normal((5, 3)))
        err = T.grad_check(lambda b: T.tsum(T.square(big + b)), rng.standard_normal(3))
    assert err < 1e-6


def test_affine_and_cross_entropy(rng):
    with T.precision(np.float64):
        w = Tensor(rng.standard_normal((4, 5)))
        b = Tensor(rng.standard_normal(5))
        targets = np.array([0, 4, 2])
        f = lambda x: T.softmax_cross_entropy(T.affine(x, w, b), targets)
        assert T.grad_check(f, rng.standard_normal((3, 4))) < 1e-6


def test_weighted_cross_entropy_ignores_masked_rows(rng):
    logits = rng.standard_normal((2, 3, 5))
    targets = np.array([[1, 2, 0], [3, 0, 0]])
    w = np.array([[1, 1, 0], [1, 0, 0]])
    full = T.softmax_cross_entropy(Tensor(logits), targets, w).item()
    ls = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    manual = -(ls[0, 0, 1] + ls[0, 1, 2] + ls[1, 0, 3]) / 3
    assert full == pytest.approx(manual, rel=1e-5)


def test_layer_norm_gradient(rng):
    with T.precision(np.float64):
        g = Tensor(rng.standard_normal(6))
        b = Tensor(rng.standard_normal(6))
        proj = rng.standard_normal((2, 6))
        assert T.grad_check(lambda x: T.tsum(T.mul(T.layer_norm(x, g, b), proj)), rng.standard_normal((2, 6))) < 1e-5


def test_grad_check_detects_wrong_gradient(rng):
    x = rng.standard_normal(4)
    assert T.grad_check(_scalar(T.square), x, analytic=3 * x) > 0.1


def test_getitem_take_rows_concat(rng):
    with T.precision(np.float64):
        assert T.grad_check(lambda x: T.tsum(T.square(x[1:, ::2])), rng.standard_normal((3, 4))) < 1e-6
        assert T.grad_check(lambda x: T.tsum(T.square(T.take_rows(x, [0, 2, 2]))), rng.standard_normal((3, 2))) < 1e-6
        other = Tensor(rng.standard_normal((2, 3)))
        assert T.grad_check(lambda x: T.tsum(T.square(T.concat([x, other], axis=-1))), rng.standard_normal((2, 2))) < 1e-6


def test_float32_default_and_precision_context():
    assert T.tensor([1.0]).data.dtype == np.float32
    with T.precision(np.float64):
        assert T.tensor([1.0]).data.dtype == np.float64
    assert T.tensor([1.0]).data.dtype == np.float32


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.tsum(T.square(x))
    assert not y.requires_grad


def test_non_finite_raises():
    with pytest.raises(NumericError):
        T.log(Tensor(np.array([-1.0])))
    with pytest.raises(NumericError):
        T.softmax(Tensor(np.array([np.nan, 1.0])))


def test_shape_errors():
    with pytest.raises(DimensionError):
        T.affine(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones(2)))
    with pytest.raises(DimensionError):
        T.softmax_cross_entropy(Tensor(np.ones((2, 3))), np.array([0, 1, 2]))
    with pytest.raises(ContractError):
        T.softmax_cross_entropy(Tensor(np.ones((2, 3))), np.array([0, 3]))


def test_masked_softmax_is_exactly_zero():
    s = T.softmax(Tensor(np.array([[1.0, 2.0, 3.0]])), mask=np.array([[True, False, True]])).data
    assert s[0, 1] == 0.0
    assert s.sum() == pytest.approx(1.0)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_is_a_distribution(values):
    s = T.softmax(Tensor(np.array(values))).data
    assert np.all(s >= 0)
    assert abs(float(s.sum()) - 1.0) < 1e-5


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8), st.floats(-5, 5))
def test_softmax_shift_invariance(values, c):
    with T.precision(np.float64):
        a = T.softmax(Tensor(np.array(values))).data
        b = T.softmax(Tensor(np.array(values) + c)).data
    assert np.allclose(a, b, atol=1e-12)


def test_cross_entropy_reference():
    p = np.array([0.2, 0.5, 0.3])
    assert T.cross_entropy(p, np.array([0.0, 1.0, 0.0])) == pytest.approx(-math.log(0.5))
    with pytest.raises(ContractError):
        T.cross_entropy(p, np.array([0.5, 0.5, 0.0]))


def test_adam_first_step_moves_by_lr():
    store = T.ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    T.adam_step(store, {"w": np.array([0.3, -4.0])}, lr=0.1)
    # bias-corrected first step is lr * sign(g) (up to eps)
    assert np.allclose(p.data, [0.9, -1.9], atol=1e-6)
    assert store.step == 1


def test_adam_rejects_missing_or_misshaped_grads():
    store = T.ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ContractError):
        T.adam_step(store, {}, lr=0.1)
    with pytest.raises(DimensionError):
        T.adam_step(store, {"w": np.zeros(3)}, lr=0.1)


def test_param_store_rejects_frozen_and_duplicates():
    store = T.ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ContractError):
        store.add("w", np.zeros(2))
    with pytest.raises(ContractError):
        store.add("phi", np.zeros(2), frozen=True)


def test_dropout_inverted_scaling(rng):
    x = Tensor(np.ones(20000))
    y = T.dropout(x, 0.9, rng).data
    assert set(np.unique(y).round(5)) <= {0.0, round(1 / 0.9, 5)}
    assert abs(y.mean() - 1.0) < 0.02
    assert np.array_equal(T.dropout(x, 0.9, rng, training=False).data, x.data)


def test_directional_check_on_mlp(rng):
    from curionav.layers import MLP
    with T.precision(np.float64):
        store = T.ParamStore()
        mlp = MLP(store, "m", (4, 8, 3), rng)
        x = Tensor(rng.standard_normal((5, 4)))
        loss = lambda: T.tsum(T.square(mlp(x)))
        assert T.directional_check(loss, list(store.params.values()), rng) < 1e-6


# --- reference values -------------------------------------------------------


def test_affine_examples():
    out = T.affine(T.tensor([1.0, 0.0]), T.tensor(np.eye(2)), T.tensor([0.0, 0.0])).data
    assert out.tolist() == [1.0, 0.0]
    assert T.affine(T.tensor([2.0]), T.tensor([[3.0]]), T.tensor([1.0])).data.tolist() == [7.0]


def test_affine_matches_triple_loop(rng):
    x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
    naive = np.zeros((4, 5))
    for i in range(4):
        for j in range(5):
            acc = b[j]
            for k in range(3):
                acc += x[i, k] * w[k, j]
            naive[i, j] = acc
    with T.precision(np.float64):
        out = T.affine(T.tensor(x), T.tensor(w), T.tensor(b)).data
    assert np.allclose(out, naive, atol=1e-12)


def test_softmax_reference_values():
    assert T.softmax(T.tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    # reference computed independently with exact exponentials
    ref = [math.exp(v) / math.fsum(math.exp(u) for u in (1, 2, 3)) for v in (1, 2, 3)]
    assert np.allclose(T.softmax(T.tensor([1.0, 2.0, 3.0])).data, ref, atol=1e-7)


def test_cross_entropy_perfect_uniform_and_random(rng):
    assert T.cross_entropy(np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0])) == 0.0
    assert T.cross_entropy(np.full(5, 0.2), np.eye(5)[3]) == pytest.approx(math.log(5), abs=1e-12)
    z = rng.standard_normal(5)
    p = np.exp(z) / np.exp(z).sum()
    assert T.cross_entropy(p, np.eye(5)[1]) == pytest.approx(-(z[1] - math.log(math.fsum(np.exp(z)))), rel=1e-10)


def test_adam_zero_gradient_is_bit_identical(rng):
    store = T.ParamStore()
    p = store.add("w", rng.standard_normal(4))
    before = p.data.copy()
    T.adam_step(store, {"w": np.zeros(4)}, lr=0.5)
    assert np.array_equal(p.data, before)


def test_adam_three_step_trace_on_quadratic():
    # f(w) = w^2 from w = 1, lr = 0.1; trace worked by hand with the standard update
    with T.precision(np.float64):
        store = T.ParamStore()
        p = store.add("w", np.array([1.0]))
        w, m, v = 1.0, 0.0, 0.0
        for t in (1, 2, 3):
            g = 2 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            T.adam_step(store, {"w": 2 * p.data}, lr=0.1)
            assert p.data[0] == pytest.approx(w, abs=1e-12)
    assert store.step == 3
