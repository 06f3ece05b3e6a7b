"""File-based stages: train the explorer, train the captioner, run, evaluate, render."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from . import checkpoint
from .agent import Agent, UpdateRecord, run_episode, train
from .captioner import (CaptionModel, Vocabulary, beam_search, build_regions, default_vocabulary,
                        generate_synthetic_dataset, load_model, save_model, train_ce)
from .captioner.train import split_pairs
from .config import RunConfig
from .curiosity import RewardRecord
from .episodelog import CaptionRecord, EpisodeLog, SpeakRecord, StepRecord, read_log, write_log
from .errors import CheckpointVersionError, ContractError, DependencyError
from .metrics import (COVERAGE_THRESHOLDS, CellScores, MetricsReport, SimilarityTable, categories_above,
                      coverage, diversity, surprisal_metric)
from .perception import EmbeddingNet
from .speaker import THRESHOLD_GRID, SpeakerKind, SpeakerPolicy, loquacity, run_speaker
from .world import CATEGORIES, generate_world, render_trajectory_map, sample_start, visited_coverage

OUT_ENV = "CURIONAV_OUT"
EXPLORER_FILE = "explorer.ckpt"
CAPTIONER_FILE = "captioner.ckpt"
VOCAB_FILE = "vocab.tsv"
LOG_DIR = "logs"
MAP_DIR = "maps"


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "curionav-out"))


# ---------------------------------------------------------------------------
# explorer persistence


def save_explorer(path, agent: Agent, net: EmbeddingNet):
    tensors = dict(agent.store.state())
    phi = net.state()
    tensors.update(phi)
    tensors["meta.explorer"] = np.array([net.dim, agent.ppo.hidden, agent.curiosity.hidden], np.float32)
    checkpoint.save(path, tensors, frozen=phi.keys())


def load_explorer(path, cfg: RunConfig) -> tuple[Agent, EmbeddingNet]:
    p = Path(path)
    if not p.is_file():
        raise DependencyError(f"explorer checkpoint not found: {p} (run explore-train first)")
    tensors, frozen = checkpoint.load(p)
    meta = tensors.pop("meta.explorer", None)
    if meta is None:
        raise CheckpointVersionError(f"{p} is not an explorer checkpoint")
    expected = [cfg.perception.feature_dim, cfg.ppo.hidden, cfg.curiosity.hidden]
    if [int(x) for x in meta] != expected:
        raise ContractError(f"explorer checkpoint sizes {[int(x) for x in meta]} do not match the config {expected}")
    net = EmbeddingNet(cfg.perception, params={k: v for k, v in tensors.items() if k in frozen})
    agent = Agent(net.dim, seed=cfg.seed, ppo=cfg.ppo, curiosity=cfg.curiosity)
    agent.store.load_state({k: v for k, v in tensors.items() if k not in frozen})
    return agent, net


def explore_train(cfg: RunConfig, out: Path, log=print) -> list[UpdateRecord]:
    out.mkdir(parents=True, exist_ok=True)
    worlds = [generate_world(s, cfg.world) for s in cfg.train_worlds]
    net = EmbeddingNet(cfg.perception)
    agent = Agent(net.dim, seed=cfg.seed, ppo=cfg.ppo, curiosity=cfg.curiosity)
    rows = ["update\tmean_surprisal\tmean_penalty\tcoverage\tforward_loss\tinverse_loss\tentropy"]

    def on_update(rec: UpdateRecord):
        l = rec.losses
        rows.append(f"{rec.update}\t{rec.mean_surprisal!r}\t{rec.mean_penalty!r}\t{rec.coverage!r}"
                    f"\t{l.forward!r}\t{l.inverse!r}\t{l.entropy!r}")
        if log and (rec.update + 1) % 25 == 0:
            log(f"update {rec.update + 1}: surprisal {rec.mean_surprisal:.4f} inverse loss {l.inverse:.3f}")

    curve = train(worlds, net, agent, seed=cfg.seed, on_update=on_update)
    save_explorer(out / EXPLORER_FILE, agent, net)
    (out / "explore_curve.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return curve


# ---------------------------------------------------------------------------
# captioner


def load_vocabulary(out: Path) -> Vocabulary:
    return Vocabulary.load(out / VOCAB_FILE)


def caption_train(cfg: RunConfig, out: Path, log=print):
    out.mkdir(parents=True, exist_ok=True)
    c = cfg.captioner
    vocab = default_vocabulary()
    pairs = generate_synthetic_dataset(cfg.train_worlds, c.dataset_size, seed=cfg.seed, config=cfg.world,
                                       min_area=c.min_area)
    train_set, heldout = split_pairs(pairs, c.heldout)
    model = CaptionModel(len(vocab), c, bos=vocab.bos, eos=vocab.eos)
    report = train_ce(model, train_set, vocab, heldout=heldout, seed=cfg.seed,
                      on_epoch=(lambda e, l: log(f"epoch {e + 1}: loss {l:.4f}")) if log else None)
    save_model(out / CAPTIONER_FILE, model)
    vocab.save(out / VOCAB_FILE)
    lines = [f"layers\t{c.layers}", f"train_pairs\t{len(train_set)}", f"heldout_pairs\t{len(heldout)}",
             f"heldout_accuracy\t{report.heldout_accuracy!r}", f"heldout_loss\t{report.heldout_loss!r}"]
    lines += [f"epoch_{i + 1}_loss\t{l!r}" for i, l in enumerate(report.epoch_losses)]
    (out / "caption_report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def load_captioner(out: Path, cfg: RunConfig) -> tuple[CaptionModel, Vocabulary]:
    vocab = load_vocabulary(out)
    p = out / CAPTIONER_FILE
    if not p.is_file():
        raise DependencyError(f"captioner checkpoint not found: {p} (run caption-train first)")
    return load_model(p, vocab, cfg.captioner), vocab


# ---------------------------------------------------------------------------
# logged episodes


def episode_world_seed(cfg: RunConfig, episode: int) -> int:
    return cfg.test_worlds[episode % len(cfg.test_worlds)]


def logged_episode(cfg: RunConfig, episode: int, agent: Agent, net: EmbeddingNet,
                   model: CaptionModel, vocab: Vocabulary, policy: SpeakerPolicy) -> EpisodeLog:
    """One test episode with the speaker and captioner active."""
    world = generate_world(episode_world_seed(cfg, episode), cfg.world)
    rng = np.random.default_rng([cfg.seed, episode])
    start = sample_start(world, rng)
    trace = run_episode(world, net, start, cfg.ppo.episode_length, rng, agent=agent, keep_observations=True)
    observations = trace.observations[1:]
    events = run_speaker(policy, observations, trace.rewards)
    log = EpisodeLog(world.seed, start, cfg.ppo.episode_length, policy.kind.value, float(policy.threshold))
    for t, (a, r, obs) in enumerate(zip(trace.actions, trace.rewards, observations)):
        log.steps.append(StepRecord(t, a, r.raw, r.penalty, r.net, trace.poses[t + 1], obs.mean_depth,
                                    list(obs.visible)))
    cache: dict[bytes, tuple] = {}
    for ev in events:
        log.speaks.append(SpeakRecord(ev.step, ev.kind.value, float(ev.threshold), float(ev.value)))
        regions = build_regions(observations[ev.step], cfg.captioner.min_area)
        key = regions.features.tobytes()
        if key not in cache:
            cap = beam_search(model, model.encode_regions(regions))
            cache[key] = (list(cap.tokens), cap.logprob)
        tokens, lp = cache[key]
        log.captions.append(CaptionRecord(ev.step, tokens, vocab.text(tokens), lp))
    log.summary = {
        "coverage": visited_coverage(world, trace.poses),
        "loquacity": float(len(events)),
        "surprisal": surprisal_metric([trace.rewards], cfg.metrics.window) if len(trace.rewards) >= cfg.metrics.window else 0.0,
    }
    return log


def _episode_worker(args):
    cfg, out, episode, kind, threshold = args
    agent, net = load_explorer(out / EXPLORER_FILE, cfg)
    model, vocab = load_captioner(out, cfg)
    policy = SpeakerPolicy(SpeakerKind(kind), threshold, cfg.speaker.window, cfg.speaker.min_area,
                           cfg.speaker.refractory)
    log = logged_episode(cfg, episode, agent, net, model, vocab, policy)
    path = out / LOG_DIR / f"{kind}_{threshold:g}_ep{episode:04d}.log"
    write_log(path, log)
    return str(path)


def run_episodes(cfg: RunConfig, out: Path, episodes: int | None = None, workers: int = 1,
                 policy: SpeakerPolicy | None = None) -> list[str]:
    policy = policy or cfg.speaker.policy()
    episodes = cfg.episodes if episodes is None else episodes
    # fail fast on missing artifacts before any worker starts
    load_explorer(out / EXPLORER_FILE, cfg)
    load_captioner(out, cfg)
    (out / LOG_DIR).mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, out, e, policy.kind.value, float(policy.threshold)) for e in range(episodes)]
    if workers <= 1:
        return [_episode_worker(j) for j in jobs]
    from multiprocessing import get_context
    with get_context("spawn").Pool(workers) as pool:
        return pool.map(_episode_worker, jobs)


# ---------------------------------------------------------------------------
# evaluation


def load_logs(logdir: Path) -> list[tuple[str, EpisodeLog]]:
    paths = sorted(Path(logdir).glob("*.log"))
    if not paths:
        raise ContractError(f"no episode logs found in {logdir}")
    return [(p.name, read_log(p)) for p in paths]


def _step_view(step: StepRecord):
    return SimpleNamespace(visible=step.visible, mean_depth=step.mean_depth)


def replay_loquacity(logs: Sequence[EpisodeLog], policy: SpeakerPolicy) -> float:
    """Loquacity of ``policy`` re-triggered on the logged steps."""
    per_episode = []
    for log in logs:
        views = [_step_view(s) for s in log.steps]
        rewards = [RewardRecord(s.t, s.raw, s.penalty, s.net) for s in log.steps]
        per_episode.append(run_speaker(policy, views, rewards))
    return loquacity(per_episode)


def similarity_table(cfg: RunConfig) -> SimilarityTable:
    m = cfg.metrics
    if m.vectors:
        p = Path(m.vectors)
        if not p.is_file():
            raise DependencyError(f"word-vector file not found: {p}")
        return SimilarityTable.load(p, seed=m.similarity_seed)
    return SimilarityTable(seed=m.similarity_seed, dim=m.similarity_dim)


def evaluate(cfg: RunConfig, logdir: Path, vocab: Vocabulary) -> MetricsReport:
    named = load_logs(logdir)
    logs = [l for _, l in named]
    table = similarity_table(cfg)
    cells: dict[tuple[str, float], list[EpisodeLog]] = {}
    for log in logs:
        cells.setdefault((log.policy, log.threshold), []).append(log)
    scores = []
    for (kind, th), group in sorted(cells.items()):
        cov = {t: [] for t in COVERAGE_THRESHOLDS}
        divs = []
        n_caps = 0
        for log in group:
            by_step = {s.t: s for s in log.steps}
            prev = None
            for c in log.captions:
                nouns = vocab.nouns_in(c.tokens)
                for t in COVERAGE_THRESHOLDS:
                    cov[t].append(coverage(nouns, categories_above(by_step[c.t].visible, t, CATEGORIES), table))
                if prev is not None:
                    divs.append(diversity(prev, nouns, table))
                prev = nouns
                n_caps += 1
        scores.append(CellScores(
            policy=kind, threshold=th, loquacity=loquacity([l.speaks for l in group]),
            cov={t: (math.fsum(v) / len(v) if v else 0.0) for t, v in cov.items()},
            div=math.fsum(divs) / len(divs) if divs else 0.0, captions=n_caps,
            surprisal=surprisal_metric([[s.raw for s in l.steps] for l in group], cfg.metrics.window),
        ))
    replay = {}
    for kind, grid in THRESHOLD_GRID.items():
        for th in grid:
            pol = SpeakerPolicy(kind, th, cfg.speaker.window, cfg.speaker.min_area, cfg.speaker.refractory)
            replay[(kind.value, float(th))] = replay_loquacity(logs, pol)
    overall = surprisal_metric([[s.raw for s in l.steps] for l in logs], cfg.metrics.window)
    return MetricsReport(scores, overall, replay, len(logs))


def write_report(report: MetricsReport, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "metrics.jsonl").write_text(report.to_lines(), encoding="utf-8")


# ---------------------------------------------------------------------------
# maps


def render_maps(cfg: RunConfig, logdir: Path, mapdir: Path, scale: int = 4) -> list[str]:
    named = load_logs(logdir)
    mapdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, log in named:
        world = generate_world(log.world_seed, cfg.world)
        path = mapdir / (Path(name).stem + ".pgm")
        path.write_bytes(render_trajectory_map(world, log.poses, scale))
        written.append(str(path))
    return written
