"""Actor-critic exploration policy trained with PPO on curiosity rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .curiosity import (CuriosityConfig, ForwardModel, InverseModel, RewardRecord, batch_surprisal,
                        forward_loss, penalty)
from .errors import ContractError, NumericError
from .layers import Linear
from .perception import EmbeddingNet, FrameStack, PerceptionConfig, embed, preprocess
from .tensor import (ParamStore, Tensor, adam_step, clip, exp, log_softmax, mean, minimum, mul,
                     softmax_cross_entropy, square, tanh, tsum)
from .world import (N_ACTIONS, AgentPose, WorldConfig, WorldMap, generate_world, render_observation,
                    sample_start, step, visited_coverage)


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 1e-4
    epochs: int = 3
    rollout: int = 128
    minibatches: int = 4
    lam: float = 0.1
    clip: float = 0.2
    gamma: float = 0.99
    gae: float = 0.95
    entropy: float = 0.01
    value_coef: float = 0.5
    hidden: int = 128
    updates: int = 300
    episode_length: int = 1000

    def validate(self):
        if not self.lr > 0:
            raise ContractError("ppo.lr must be > 0")
        if self.epochs < 1 or self.rollout < 1 or self.minibatches < 1 or self.minibatches > self.rollout:
            raise ContractError("ppo.epochs, ppo.rollout >= 1 and 1 <= ppo.minibatches <= ppo.rollout")
        if not self.clip > 0:
            raise ContractError(f"ppo.clip must be > 0, got {self.clip}")
        if not 0 < self.gamma <= 1:
            raise ContractError(f"ppo.gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.gae <= 1:
            raise ContractError(f"ppo.gae must be in (0, 1], got {self.gae}")
        if self.lam < 0 or self.entropy < 0 or self.value_coef < 0:
            raise ContractError("ppo.lam, ppo.entropy and ppo.value_coef must be >= 0")
        if self.updates < 0 or self.episode_length < 1 or self.hidden < 1:
            raise ContractError("ppo.updates >= 0, ppo.episode_length >= 1, ppo.hidden >= 1")


class PolicyNet:
    """Shared tanh trunk with an action-logits head and a scalar value head."""

    def __init__(self, store: ParamStore, feature_dim: int, rng: np.random.Generator,
                 hidden: int = 128, n_actions: int = N_ACTIONS):
        self.trunk = Linear(store, "policy.trunk", feature_dim, hidden, rng)
        self.pi = Linear(store, "policy.pi", hidden, n_actions, rng)
        self.v = Linear(store, "policy.v", hidden, 1, rng)
        # near-uniform initial policy
        self.pi.w.data = self.pi.w.data * 0.01
        self.pi.b.data = self.pi.b.data * 0.0
        self.n_actions = n_actions

    def __call__(self, feats) -> tuple[Tensor, Tensor]:
        h = tanh(self.trunk(feats))
        return self.pi(h), self.v(h)

    def numpy(self, feat: np.ndarray) -> tuple[np.ndarray, float]:
        h = np.tanh(self.trunk.numpy(feat))
        return self.pi.numpy(h), float(self.v.numpy(h).reshape(-1)[0])


def sample_from_logits(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    z = np.asarray(logits, np.float64)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(p), u, side="right"))
    a = min(a, len(p) - 1)
    return a, float(math.log(p[a]))


def sample_action(policy: PolicyNet, feat: np.ndarray, rng: np.random.Generator) -> tuple[int, float, float]:
    logits, value = policy.numpy(np.asarray(feat))
    a, logp = sample_from_logits(logits, rng)
    return a, logp, value


class Agent:
    """Policy plus dynamics models sharing one optimizer store."""

    def __init__(self, feature_dim: int, seed: int = 0, ppo: PpoConfig = PpoConfig(),
                 curiosity: CuriosityConfig = CuriosityConfig()):
        ppo.validate()
        curiosity.validate()
        self.ppo, self.curiosity = ppo, curiosity
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.policy = PolicyNet(self.store, feature_dim, rng, ppo.hidden)
        self.forward = ForwardModel(self.store, feature_dim, rng, curiosity.hidden)
        self.inverse = InverseModel(self.store, feature_dim, rng, curiosity.hidden)


@dataclass
class RolloutBuffer:
    feats: np.ndarray
    next_feats: np.ndarray
    actions: np.ndarray
    logps: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    rewards: list[RewardRecord]
    last_value: float
    advantages: np.ndarray | None = None
    raw_advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    @property
    def reward_array(self) -> np.ndarray:
        return np.array([r.net for r in self.rewards], dtype=np.float64)


class EnvRunner:
    """One exploration stream: world, pose, frame stack and action history."""

    def __init__(self, worlds: Sequence[WorldMap], net: EmbeddingNet, rng: np.random.Generator,
                 episode_length: int = 1000, starts: Sequence[AgentPose] | None = None,
                 curiosity: CuriosityConfig | None = None):
        self.worlds = list(worlds)
        self.curiosity = curiosity or CuriosityConfig()
        self.net = net
        self.rng = rng
        self.episode_length = episode_length
        self.starts = list(starts) if starts else None
        self.episode = -1
        self.reset()

    def reset(self):
        self.episode += 1
        self.world = self.worlds[self.episode % len(self.worlds)]
        if self.starts:
            self.pose = self.starts[self.episode % len(self.starts)]
        else:
            self.pose = sample_start(self.world, self.rng)
        self.t = 0
        self.history: list[int] = []
        self.trajectory = [self.pose]
        self.obs = render_observation(self.world, self.pose)
        self.stack = FrameStack(preprocess(self.obs, self.net.config))
        self.feat = embed(self.net, self.stack)

    def advance(self, action: int) -> tuple[np.ndarray, float, bool]:
        """Apply ``action``; returns (next feature, penalty, episode finished)."""
        self.pose = step(self.world, self.pose, action)
        self.history.append(int(action))
        pen = penalty(self.curiosity, self.history)
        self.obs = render_observation(self.world, self.pose)
        self.stack.push(preprocess(self.obs, self.net.config))
        self.feat = embed(self.net, self.stack)
        self.trajectory.append(self.pose)
        self.t += 1
        return self.feat, pen, self.t >= self.episode_length


def collect_rollout(runner: EnvRunner, agent: Agent, rng: np.random.Generator,
                    length: int | None = None) -> RolloutBuffer:
    length = length or agent.ppo.rollout
    d = runner.net.dim
    feats = np.zeros((length, d), np.float32)
    nexts = np.zeros((length, d), np.float32)
    actions = np.zeros(length, np.int64)
    logps = np.zeros(length, np.float64)
    values = np.zeros(length, np.float64)
    dones = np.zeros(length, bool)
    pens = np.zeros(length, np.float64)
    steps = np.zeros(length, np.int64)
    for t in range(length):
        feats[t] = runner.feat
        a, lp, v = sample_action(agent.policy, runner.feat, rng)
        steps[t] = runner.t
        nf, pen, done = runner.advance(a)
        nexts[t], actions[t], logps[t], values[t], dones[t], pens[t] = nf, a, lp, v, done, pen
        if done:
            runner.reset()
    raw = batch_surprisal(agent.curiosity, agent.forward.predict(feats, actions), nexts)
    records = [RewardRecord(int(steps[t]), float(raw[t]), float(pens[t]), float(raw[t]) - float(pens[t]))
               for t in range(length)]
    _, last_value = agent.policy.numpy(runner.feat)
    return RolloutBuffer(feats, nexts, actions, logps, values, dones, records, float(last_value))


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float) -> np.ndarray:
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    dones = np.asarray(dones, bool)
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        next_v = last_value if t == len(rewards) - 1 else values[t + 1]
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv


def compute_advantages(buffer: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    raw = gae(buffer.reward_array, buffer.values, buffer.dones, buffer.last_value, gamma, lam)
    buffer.raw_advantages = raw
    buffer.returns = raw + buffer.values
    std = raw.std()
    buffer.advantages = (raw - raw.mean()) / (std + 1e-8) if len(raw) > 1 else np.zeros_like(raw)
    return buffer


def clipped_surrogate(ratio, adv, clip_eps: float):
    """Per-sample min(r A, clip(r, 1-eps, 1+eps) A) on plain arrays."""
    ratio, adv = np.asarray(ratio, np.float64), np.asarray(adv, np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv)


@dataclass
class LossReport:
    surrogate: float = 0.0
    value: float = 0.0
    entropy: float = 0.0
    forward: float = 0.0
    inverse: float = 0.0
    total: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    steps: int = 0


def ppo_update(agent: Agent, buffer: RolloutBuffer, rng: np.random.Generator, update_index: int = 0) -> LossReport:
    if buffer.advantages is None:
        raise ContractError("compute_advantages must run before ppo_update")
    cfg, cur = agent.ppo, agent.curiosity
    n = len(buffer)
    report = LossReport()
    store = agent.store
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for mb in np.array_split(order, cfg.minibatches):
            store.zero_grad()
            feats = Tensor(buffer.feats[mb])
            acts = buffer.actions[mb]
            adv = Tensor(buffer.advantages[mb].astype(np.float32))
            try:
                logits, values = agent.policy(feats)
                ls = log_softmax(logits)
                logp = ls[np.arange(len(mb)), acts]
                ratio = exp(logp - Tensor(buffer.logps[mb].astype(np.float32)))
                surr = mean(minimum(mul(ratio, adv), mul(clip(ratio, 1 - cfg.clip, 1 + cfg.clip), adv)))
                entropy = mean(-tsum(mul(exp(ls), ls), axis=-1))
                vloss = mean(square(values.reshape(-1) - Tensor(buffer.returns[mb].astype(np.float32))))
                ppo_loss = -surr + cfg.value_coef * vloss - cfg.entropy * entropy
                lf = forward_loss(agent.forward(feats, acts), buffer.next_feats[mb])
                li = softmax_cross_entropy(agent.inverse.logits(feats, Tensor(buffer.next_feats[mb])), acts)
                total = cfg.lam * ppo_loss + cur.beta * lf + (1.0 - cur.beta) * li
                total.backward()
                adam_step(store, store.grads(), cfg.lr)
            except NumericError as exc:
                raise NumericError(f"non-finite loss in PPO update {update_index}: {exc}") from exc
            r = ratio.data.astype(np.float64)
            report.surrogate += float(surr.data)
            report.value += float(vloss.data)
            report.entropy += float(entropy.data)
            report.forward += float(lf.data)
            report.inverse += float(li.data)
            report.total += float(total.data)
            report.approx_kl += float(np.mean((r - 1) - np.log(r)))
            report.clip_fraction += float(np.mean(np.abs(r - 1) > cfg.clip))
            report.steps += 1
    for k in ("surrogate", "value", "entropy", "forward", "inverse", "total", "approx_kl", "clip_fraction"):
        setattr(report, k, getattr(report, k) / report.steps)
    return report


@dataclass
class UpdateRecord:
    update: int
    mean_surprisal: float
    mean_penalty: float
    coverage: float
    losses: LossReport


def train(worlds: Sequence[WorldMap], net: EmbeddingNet, agent: Agent, seed: int = 0,
          updates: int | None = None, on_update: Callable[[UpdateRecord], None] | None = None) -> list[UpdateRecord]:
    """Alternate rollout collection and PPO updates; returns the training curve."""
    updates = agent.ppo.updates if updates is None else updates
    rng = np.random.default_rng(seed)
    runner = EnvRunner(worlds, net, np.random.default_rng(rng.integers(2**63)), agent.ppo.episode_length,
                       curiosity=agent.curiosity)
    curve = []
    for u in range(updates):
        buf = collect_rollout(runner, agent, rng)
        compute_advantages(buf, agent.ppo.gamma, agent.ppo.gae)
        losses = ppo_update(agent, buf, rng, u)
        net.verify()
        rec = UpdateRecord(u, float(np.mean([r.raw for r in buf.rewards])),
                           float(np.mean([r.penalty for r in buf.rewards])),
                           visited_coverage(runner.world, runner.trajectory), losses)
        curve.append(rec)
        if on_update:
            on_update(rec)
    return curve


@dataclass
class EpisodeTrace:
    poses: list[AgentPose]
    actions: list[int]
    rewards: list[RewardRecord]
    observations: list = field(default_factory=list)

    def coverage(self, world: WorldMap) -> float:
        return visited_coverage(world, self.poses)


def run_episode(world: WorldMap, net: EmbeddingNet, start: AgentPose, length: int,
                rng: np.random.Generator, agent: Agent | None = None, keep_observations: bool = False,
                curiosity: CuriosityConfig | None = None) -> EpisodeTrace:
    """Roll one episode. Without an agent, actions are uniform random.

    Surprisal is only computed when an agent (and so a forward model) is given.
    """
    cur = curiosity or (agent.curiosity if agent else CuriosityConfig())
    runner = EnvRunner([world], net, rng, length, starts=[start], curiosity=cur)
    actions, rewards = [], []
    observations = [runner.obs] if keep_observations else []
    for t in range(length):
        feat = runner.feat
        if agent is None:
            a = int(rng.integers(N_ACTIONS))
        else:
            a, _, _ = sample_action(agent.policy, feat, rng)
        nf, pen, _ = runner.advance(a)
        raw = 0.0
        if agent is not None:
            pred = agent.forward.predict(feat[None, :], [a])
            raw = float(batch_surprisal(cur, pred, nf[None, :])[0])
        actions.append(a)
        rewards.append(RewardRecord(t, raw, pen, raw - pen))
        if keep_observations:
            observations.append(runner.obs)
    return EpisodeTrace(runner.trajectory, actions, rewards, observations)


def repeat_runs(actions: Sequence[int], min_len: int = 5) -> tuple[int, int]:
    """(number of maximal same-action runs of length >= min_len, total number of runs)."""
    runs, long_runs = 0, 0
    i = 0
    while i < len(actions):
        j = i
        while j < len(actions) and actions[j] == actions[i]:
            j += 1
        runs += 1
        long_runs += (j - i) >= min_len
        i = j
    return long_runs, runs
