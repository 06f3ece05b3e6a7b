"""Exploration ablation: full curiosity agent vs no-penalty agent vs random policy."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .agent import Agent, EpisodeTrace, repeat_runs, run_episode, train
from .config import RunConfig
from .perception import EmbeddingNet
from .world import generate_world, sample_start

VARIANTS = ("full", "no_penalty", "random")


@dataclass
class VariantResult:
    variant: str
    seed: int
    coverage: float
    long_runs: int
    runs: int
    trace: EpisodeTrace


@dataclass
class AblationSummary:
    results: list[VariantResult]

    def of(self, variant: str) -> list[VariantResult]:
        return [r for r in self.results if r.variant == variant]

    def mean_coverage(self, variant: str) -> float:
        rs = self.of(variant)
        return math.fsum(r.coverage for r in rs) / len(rs)

    def long_run_frequency(self, variant: str) -> float:
        """Pooled fraction of maximal same-action runs that reach the repeat length."""
        rs = self.of(variant)
        return sum(r.long_runs for r in rs) / sum(r.runs for r in rs)

    def lines(self) -> list[str]:
        out = []
        for v in VARIANTS:
            if self.of(v):
                out.append(f"{v:<11} coverage {self.mean_coverage(v):.4f}  long-run frequency {self.long_run_frequency(v):.4f}")
        return out


def exploration_ablation(seeds: Sequence[int], cfg: RunConfig = RunConfig(), updates: int | None = None,
                         keep_observations: bool = False,
                         on_result: Callable[[VariantResult], None] | None = None) -> AblationSummary:
    """Train one agent per (seed, variant) on that seed's world, then roll one
    evaluation episode from a shared start pose with a shared sampling stream."""
    net = EmbeddingNet(cfg.perception)
    length = cfg.ppo.episode_length
    results = []
    for seed in seeds:
        world = generate_world(seed, cfg.world)
        start = sample_start(world, np.random.default_rng([seed, 1]))
        for variant in VARIANTS:
            if variant == "random":
                agent = None
            else:
                cur = cfg.curiosity if variant == "full" else replace(cfg.curiosity, use_penalty=False)
                agent = Agent(net.dim, seed=seed, ppo=cfg.ppo, curiosity=cur)
                train([world], net, agent, seed=seed, updates=updates)
            trace = run_episode(world, net, start, length, np.random.default_rng([seed, 2]), agent=agent,
                                keep_observations=keep_observations and agent is not None,
                                curiosity=None if agent else cfg.curiosity)
            long_runs, runs = repeat_runs(trace.actions, cfg.curiosity.repeat)
            res = VariantResult(variant, seed, trace.coverage(world), long_runs, runs, trace)
            results.append(res)
            if on_result:
                on_result(res)
    return AblationSummary(results)
