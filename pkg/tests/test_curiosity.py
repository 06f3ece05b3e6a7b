import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from curionav import tensor as T
from curionav.curiosity import (CuriosityConfig, ForwardModel, InverseModel, RewardRecord, forward_loss,
                                forward_predict, inverse_loss, inverse_predict, net_reward, penalty, records_from,
                                surprisal)
from curionav.errors import ContractError, DimensionError
from curionav.tensor import ParamStore, Tensor

ONE = CuriosityConfig(eta=1.0)


def models(dim=6, hidden=16, seed=0, zero_last=False):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    return store, ForwardModel(store, dim, rng, hidden, zero_last=zero_last), InverseModel(store, dim, rng, hidden)


def test_forward_predict_deterministic_and_zero_init(rng):
    _, f, _ = models()
    x = rng.standard_normal(6).astype(np.float32)
    assert np.array_equal(forward_predict(f, x, 1), forward_predict(f, x, 1))
    _, z, _ = models(zero_last=True)
    assert np.array_equal(forward_predict(z, x, 2), np.zeros(6))
    with pytest.raises(DimensionError):
        forward_predict(f, np.zeros(5), 0)
    with pytest.raises(ContractError):
        forward_predict(f, x, 3)


def test_forward_loss_values(rng):
    assert forward_loss(np.ones(3), np.ones(3)) == 0.0
    assert forward_loss(np.array([1.0, 1.0]), np.zeros(2)) == 1.0
    a, b = rng.standard_normal(128), rng.standard_normal(128)
    assert forward_loss(a, b) == pytest.approx(0.5 * math.fsum((a - b) ** 2), rel=1e-12)


def test_inverse_predict_is_distribution(rng):
    _, _, inv = models()
    for _ in range(10):
        p = inverse_predict(inv, rng.standard_normal(6), rng.standard_normal(6))
        assert abs(p.sum() - 1) < 1e-6 and np.all(p > 0)
    x, y = np.ones(6), np.zeros(6)
    assert np.array_equal(inverse_predict(inv, x, y), inverse_predict(inv, x, y))


def test_inverse_loss_values(rng):
    assert inverse_loss(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    assert inverse_loss(np.full(3, 1 / 3), 2) == pytest.approx(math.log(3), abs=1e-12)
    z = rng.standard_normal(3)
    p = np.exp(z) / np.exp(z).sum()
    assert inverse_loss(p, 0) == pytest.approx(-math.log(p[0]), rel=1e-12)


def test_surprisal_values():
    assert surprisal(ONE, np.ones(4), np.ones(4)) == 0.0
    assert surprisal(ONE, np.array([1.0, 1.0]), np.zeros(2)) == 1.0
    half = CuriosityConfig(eta=0.5)
    a, b = np.array([0.3, -1.2, 2.0]), np.array([0.1, 0.4, -0.7])
    assert surprisal(half, a, b) * 2 == surprisal(ONE, a, b)


def test_penalty_rule():
    cfg = CuriosityConfig()
    assert penalty(cfg, [0] * 5) == 0.01
    assert penalty(cfg, [0, 0, 0, 0, 1]) == 0.0
    assert penalty(cfg, [0] * 4) == 0.0
    seq = [0] * 7
    assert [penalty(cfg, seq[:k]) for k in range(1, 8)] == [0, 0, 0, 0, 0.01, 0.01, 0.01]
    assert penalty(CuriosityConfig(use_penalty=False), [0] * 9) == 0.0


@given(st.lists(st.integers(0, 2), max_size=6), st.lists(st.integers(0, 2), min_size=5, max_size=8))
def test_penalty_depends_only_on_recent_actions(old_a, tail):
    cfg = CuriosityConfig()
    assert penalty(cfg, old_a + tail) == penalty(cfg, tail)


def test_net_reward():
    rec = net_reward(ONE, np.array([math.sqrt(0.1)]), np.zeros(1), [1] * 5, step=3)
    assert rec.step == 3 and rec.raw == pytest.approx(0.05) and rec.penalty == 0.01
    assert rec.net == pytest.approx(0.04)
    rec = net_reward(ONE, np.ones(2), np.zeros(2), [0, 1, 2])
    assert rec.net == rec.raw


def test_twenty_step_trace_matches_manual_evaluation(rng):
    cfg = CuriosityConfig()
    actions = [0] * 7 + [1, 2] + [2] * 6 + [0, 1, 0, 0, 0]
    raw = rng.uniform(0, 0.1, 20).tolist()
    recs = records_from(cfg, raw, actions)
    expected_pen = []
    run = 0
    for i, a in enumerate(actions):
        run = run + 1 if i and actions[i - 1] == a else 1
        expected_pen.append(0.01 if run >= 5 else 0.0)
    assert [r.penalty for r in recs] == expected_pen
    assert all(r.net == r.raw - r.penalty for r in recs)
    assert [r.step for r in recs] == list(range(20))


@given(st.lists(st.floats(0, 5), min_size=1, max_size=30), st.data())
def test_reward_bounds(raw, data):
    acts = data.draw(st.lists(st.integers(0, 2), min_size=len(raw), max_size=len(raw)))
    for r in records_from(CuriosityConfig(), raw, acts):
        assert r.raw >= 0 and r.net >= -0.01


def test_dynamics_gradients(rng):
    with T.precision(np.float64):
        store, f, inv = models(dim=4, hidden=5)
        x = Tensor(rng.standard_normal((3, 4)))
        target = rng.standard_normal((3, 4))
        acts = np.array([0, 2, 1])
        assert T.grad_check(lambda p: forward_loss(p, target), rng.standard_normal((3, 4))) < 1e-6
        params = list(store.params.values())
        lf = lambda: forward_loss(f(x, acts), target)
        li = lambda: T.softmax_cross_entropy(inv.logits(x, Tensor(target)), acts)
        assert T.directional_check(lf, params, rng) < 1e-5
        assert T.directional_check(li, params, rng) < 1e-5


def test_forward_training_decreases_loss(rng):
    store, f, _ = models(dim=8, hidden=32, seed=1)
    feats = rng.standard_normal((64, 8)).astype(np.float32)
    acts = rng.integers(0, 3, 64)
    nxt = (feats * 0.5 + acts[:, None] * 0.3).astype(np.float32)
    losses = []
    for _ in range(200):
        store.zero_grad()
        loss = forward_loss(f(Tensor(feats), acts), nxt)
        loss.backward()
        T.adam_step(store, store.grads("fwd"), 1e-3, names=store.names("fwd"))
        losses.append(float(loss.data))
    assert losses[-1] < losses[0]
    assert all(b < a for a, b in zip(losses[::20], losses[20::20]))


def test_inverse_model_learns_deterministic_transitions(rng):
    # next = feat + action-specific shift; a trained model beats chance on held-out pairs
    store, _, inv = models(dim=6, hidden=32, seed=2)
    shifts = rng.standard_normal((3, 6)).astype(np.float32)
    def batch(n):
        x = rng.standard_normal((n, 6)).astype(np.float32)
        a = rng.integers(0, 3, n)
        return x, x + shifts[a], a
    for _ in range(300):
        x, y, a = batch(64)
        store.zero_grad()
        T.softmax_cross_entropy(inv.logits(Tensor(x), Tensor(y)), a).backward()
        T.adam_step(store, store.grads("inv"), 3e-3, names=store.names("inv"))
    x, y, a = batch(300)
    acc = np.mean(inv.predict_logits(x, y).argmax(-1) == a)
    assert acc > 1 / 3


def test_trained_forward_model_separates_actions(rng):
    store, f, _ = models(dim=6, hidden=32, seed=3)
    shifts = np.eye(3, 6, dtype=np.float32)
    for _ in range(300):
        x = rng.standard_normal((64, 6)).astype(np.float32)
        a = rng.integers(0, 3, 64)
        store.zero_grad()
        forward_loss(f(Tensor(x), a), x + shifts[a]).backward()
        T.adam_step(store, store.grads("fwd"), 3e-3, names=store.names("fwd"))
    x = rng.standard_normal(6).astype(np.float32)
    assert np.linalg.norm(forward_predict(f, x, 0) - forward_predict(f, x, 1)) > 0.5


def test_config_validation():
    for bad in (dict(eta=0), dict(beta=1.5), dict(penalty=-1), dict(repeat=0)):
        with pytest.raises(ContractError):
            CuriosityConfig(**bad).validate()
