"""Region features built from the ground-truth semantics of an observation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..world import CATEGORIES, Observation

N_CAT = len(CATEGORIES)
FEATURE_DIM = N_CAT + 4     # one-hot, area, mean depth, horizontal centre, scene flag
MAX_REGIONS = 16


@dataclass(frozen=True)
class RegionSet:
    features: np.ndarray          # (N, FEATURE_DIM) float32
    categories: tuple[int, ...]   # category per object region (scene region excluded)
    areas: tuple[float, ...]

    def __post_init__(self):
        f = self.features
        if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
            raise ContractError(f"region features must be (N, {FEATURE_DIM}), got {f.shape}")
        if not 1 <= f.shape[0] <= MAX_REGIONS:
            raise ContractError(f"region count must be in [1, {MAX_REGIONS}], got {f.shape[0]}")
        if not np.isfinite(f).all():
            raise ContractError("region features must be finite")

    def __len__(self):
        return self.features.shape[0]


def region_row(category: int | None, area: float, depth: float, centre: float) -> np.ndarray:
    row = np.zeros(FEATURE_DIM, np.float32)
    if category is None:
        row[-1] = 1.0
    else:
        row[category] = 1.0
    row[N_CAT:N_CAT + 3] = (area, depth, centre)
    return row


def build_regions(obs: Observation, min_area: float = 0.01) -> RegionSet:
    """One region per visible object with area >= ``min_area`` (largest first,
    at most 15) plus a whole-scene region that is always present."""
    width = obs.width
    depth_norm = obs.depth_norm
    cols = np.arange(width)
    objs = sorted((v for v in obs.visible if v[2] >= min_area), key=lambda v: (-v[2], v[1], v[0]))
    objs = objs[:MAX_REGIONS - 1]
    rows, cats, areas = [], [], []
    for inst, cat, area in objs:
        sel = obs.semantic == inst
        rows.append(region_row(cat, area, float(depth_norm[sel].mean()), float((cols[sel].mean() + 0.5) / width)))
        cats.append(int(cat))
        areas.append(float(area))
    rows.append(region_row(None, float(sum(areas)), float(depth_norm.mean()), 0.5))
    return RegionSet(np.stack(rows), tuple(cats), tuple(areas))


def ranked_categories(regions: RegionSet) -> list[int]:
    """Distinct categories ordered by their largest region area (ties: lower id first)."""
    best: dict[int, float] = {}
    for c, a in zip(regions.categories, regions.areas):
        best[c] = max(best.get(c, 0.0), a)
    return sorted(best, key=lambda c: (-best[c], c))
