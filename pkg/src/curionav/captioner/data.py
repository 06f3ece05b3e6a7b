"""Templated captions for rendered views of generated worlds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractError
from ..world import CATEGORIES, WorldConfig, generate_world, render_observation, sample_start
from .regions import RegionSet, build_regions, ranked_categories
from .vocab import Vocabulary

MAX_MENTIONS = 3
# (weight, opening words) and (weight, connector before the third object)
OPENINGS = ((0.8, ("a", "room", "with")), (0.2, ("there", "is")))
CONNECTORS = ((0.8, "near"), (0.2, "beside"))
EMPTY_KEEP = 0.3   # fraction of object-free views kept, so scenes with objects dominate


@dataclass(frozen=True)
class CaptionPair:
    regions: RegionSet
    words: tuple[str, ...]
    categories: tuple[int, ...]     # ground-truth categories above the region threshold


def _pick(options, rng: np.random.Generator):
    weights = np.array([w for w, _ in options])
    return options[int(rng.choice(len(options), p=weights / weights.sum()))][1]


def template_caption(categories: Sequence[int], rng: np.random.Generator) -> tuple[str, ...]:
    """Caption naming up to three categories, given largest first."""
    cats = [CATEGORIES[c] for c in categories[:MAX_MENTIONS]]
    if not cats:
        return ("an", "empty", "room")
    words = list(_pick(OPENINGS, rng)) + ["a", cats[0]]
    if len(cats) > 1:
        words += ["and", "a", cats[1]]
    if len(cats) > 2:
        words += [_pick(CONNECTORS, rng), "a", cats[2]]
    return tuple(words)


def caption_for(regions: RegionSet, rng: np.random.Generator) -> tuple[str, ...]:
    return template_caption(ranked_categories(regions), rng)


def generate_synthetic_dataset(world_seeds: Sequence[int], size: int, seed: int = 0,
                               config: WorldConfig = WorldConfig(), min_area: float = 0.01) -> list[CaptionPair]:
    """``size`` (regions, caption) pairs from random poses in the given worlds."""
    rng = np.random.default_rng(seed)
    worlds = [generate_world(int(s), config) for s in world_seeds]
    pairs: list[CaptionPair] = []
    while len(pairs) < size:
        world = worlds[int(rng.integers(len(worlds)))]
        obs = render_observation(world, sample_start(world, rng))
        regions = build_regions(obs, min_area)
        if not regions.categories and rng.random() >= EMPTY_KEEP:
            continue
        pairs.append(CaptionPair(regions, caption_for(regions, rng), tuple(sorted(set(regions.categories)))))
    return pairs


def encode_pairs(pairs: Sequence[CaptionPair], vocab: Vocabulary, max_len: int):
    """Padded arrays for teacher forcing.

    Returns region features (B, N, F), region mask (B, N), decoder inputs
    (B, T) starting with BOS and targets (B, T) ending with EOS, PAD-filled.
    """
    n = max(len(p.regions) for p in pairs)
    seqs = [vocab.encode(p.words) for p in pairs]
    t = max(len(s) for s in seqs) + 1
    if t > max_len:
        raise ContractError(f"caption of {t} tokens exceeds max_len {max_len}")
    feat_dim = pairs[0].regions.features.shape[1]
    feats = np.zeros((len(pairs), n, feat_dim), np.float32)
    mask = np.zeros((len(pairs), n), bool)
    inputs = np.full((len(pairs), t), vocab.pad, np.int64)
    targets = np.full((len(pairs), t), vocab.pad, np.int64)
    for i, (p, s) in enumerate(zip(pairs, seqs)):
        k = len(p.regions)
        feats[i, :k] = p.regions.features
        mask[i, :k] = True
        inputs[i, :len(s) + 1] = [vocab.bos] + s
        targets[i, :len(s) + 1] = s + [vocab.eos]
    return feats, mask, inputs, targets
