"""Forward/inverse dynamics models, surprisal and the repeated-action penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .layers import MLP
from .tensor import ParamStore, Tensor, as_tensor, concat, cross_entropy, mul, softmax, square, tsum
from .world import N_ACTIONS


@dataclass(frozen=True)
class CuriosityConfig:
    eta: float = 0.005
    beta: float = 0.2
    penalty: float = 0.01
    repeat: int = 5
    hidden: int = 256
    use_penalty: bool = True

    def validate(self):
        if not self.eta > 0:
            raise ContractError(f"curiosity.eta must be > 0, got {self.eta}")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"curiosity.beta must be in [0, 1], got {self.beta}")
        if self.penalty < 0:
            raise ContractError(f"curiosity.penalty must be >= 0, got {self.penalty}")
        if self.repeat < 1:
            raise ContractError(f"curiosity.repeat must be >= 1, got {self.repeat}")
        if self.hidden < 1:
            raise ContractError("curiosity.hidden must be >= 1")


@dataclass(frozen=True)
class RewardRecord:
    step: int
    raw: float
    penalty: float
    net: float


def one_hot(ids, k: int = N_ACTIONS) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise ContractError(f"action id out of range [0, {k})")
    out = np.zeros(ids.shape + (k,), dtype=np.float32)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


class ForwardModel:
    """Predicts the next embedding from the current one and the action taken."""

    def __init__(self, store: ParamStore, feature_dim: int, rng: np.random.Generator,
                 hidden: int = 256, n_actions: int = N_ACTIONS, zero_last: bool = False, name: str = "fwd"):
        self.dim, self.n_actions = feature_dim, n_actions
        self.net = MLP(store, name, (feature_dim + n_actions, hidden, feature_dim), rng, zero_last=zero_last)

    def _check(self, feat_shape):
        if feat_shape[-1] != self.dim:
            raise DimensionError(f"forward model expects features of width {self.dim}, got {feat_shape}")

    def __call__(self, feat, actions) -> Tensor:
        feat = as_tensor(feat)
        self._check(feat.shape)
        act = one_hot(actions, self.n_actions).astype(feat.data.dtype)
        return self.net(concat([feat, Tensor(act)], axis=-1))

    def predict(self, feat: np.ndarray, actions) -> np.ndarray:
        feat = np.asarray(feat)
        self._check(feat.shape)
        return self.net.numpy(np.concatenate([feat, one_hot(actions, self.n_actions)], axis=-1))


class InverseModel:
    """Predicts a distribution over the action taken between two embeddings."""

    def __init__(self, store: ParamStore, feature_dim: int, rng: np.random.Generator,
                 hidden: int = 256, n_actions: int = N_ACTIONS, name: str = "inv"):
        self.dim, self.n_actions = feature_dim, n_actions
        self.net = MLP(store, name, (2 * feature_dim, hidden, n_actions), rng)

    def logits(self, feat_t, feat_next) -> Tensor:
        feat_t, feat_next = as_tensor(feat_t), as_tensor(feat_next)
        if feat_t.shape != feat_next.shape or feat_t.shape[-1] != self.dim:
            raise DimensionError(f"inverse model inputs {feat_t.shape} / {feat_next.shape}, width {self.dim}")
        return self.net(concat([feat_t, feat_next], axis=-1))

    def predict_logits(self, feat_t: np.ndarray, feat_next: np.ndarray) -> np.ndarray:
        return self.net.numpy(np.concatenate([feat_t, feat_next], axis=-1))


def forward_predict(model: ForwardModel, feat, action: int) -> np.ndarray:
    return model.predict(np.asarray(feat)[None, :], [int(action)])[0]


def forward_loss(pred, actual):
    """0.5 * squared L2 error, averaged over leading batch rows.

    Differentiable when ``pred`` is a :class:`Tensor`; plain arrays give a float.
    """
    if isinstance(pred, Tensor):
        actual_t = as_tensor(actual)
        if pred.shape != actual_t.shape:
            raise DimensionError(f"forward_loss shapes differ: {pred.shape} vs {actual_t.shape}")
        per_row = tsum(square(pred - actual_t), axis=-1)
        rows = 1 if pred.ndim == 1 else int(np.prod(pred.shape[:-1]))
        return mul(tsum(per_row), 0.5 / rows)
    p, a = np.asarray(pred, np.float64), np.asarray(actual, np.float64)
    if p.shape != a.shape:
        raise DimensionError(f"forward_loss shapes differ: {p.shape} vs {a.shape}")
    d = p - a
    return float(0.5 * np.mean(np.sum(d * d, axis=-1)))


def inverse_predict(model: InverseModel, feat_t, feat_next) -> np.ndarray:
    logits = model.predict_logits(np.asarray(feat_t)[None, :], np.asarray(feat_next)[None, :])[0]
    return softmax(Tensor(logits.astype(np.float64))).data


def inverse_loss(dist, truth: int) -> float:
    dist = np.asarray(dist)
    return cross_entropy(dist, one_hot([int(truth)], dist.shape[-1])[0])


def surprisal(config: CuriosityConfig, pred, actual) -> float:
    """(eta / 2) * ||pred - actual||^2, computed outside the autodiff graph."""
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    a = np.asarray(actual.data if isinstance(actual, Tensor) else actual, dtype=np.float64)
    if p.shape != a.shape:
        raise DimensionError(f"surprisal shapes differ: {p.shape} vs {a.shape}")
    d = p - a
    return float(config.eta / 2.0 * np.dot(d.reshape(-1), d.reshape(-1)))


def batch_surprisal(config: CuriosityConfig, pred: np.ndarray, actual: np.ndarray) -> np.ndarray:
    d = np.asarray(pred, np.float64) - np.asarray(actual, np.float64)
    return config.eta / 2.0 * np.einsum("ij,ij->i", d, d)


def penalty(config: CuriosityConfig, action_history: Sequence[int]) -> float:
    """p~ when the last ``repeat`` actions are all the same, else 0."""
    if not config.use_penalty:
        return 0.0
    k = config.repeat
    if len(action_history) < k:
        return 0.0
    tail = list(action_history[-k:])
    return config.penalty if all(a == tail[0] for a in tail) else 0.0


def net_reward(config: CuriosityConfig, pred, actual, action_history: Sequence[int], step: int = 0) -> RewardRecord:
    raw = surprisal(config, pred, actual)
    pen = penalty(config, action_history)
    return RewardRecord(step, raw, pen, raw - pen)


def records_from(config: CuriosityConfig, raw: Sequence[float], actions: Sequence[int],
                 history: Sequence[int] = (), first_step: int = 0) -> list[RewardRecord]:
    """Reward records for a run of steps; ``history`` holds actions from before the run."""
    hist = list(history)[-config.repeat:]
    out = []
    for i, (r, a) in enumerate(zip(raw, actions)):
        hist.append(int(a))
        hist = hist[-config.repeat:]
        pen = penalty(config, hist)
        out.append(RewardRecord(first_step + i, float(r), pen, float(r) - pen))
    return out


def curiosity_objective(reward_term: float, forward_term: float, inverse_term: float,
                        lam: float, beta: float) -> float:
    """-lam * E[sum r] + beta * L_F + (1 - beta) * L_I."""
    return -lam * reward_term + beta * forward_term + (1.0 - beta) * inverse_term
