"""Caption coverage / diversity scores and the navigation surprisal metric."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError

COVERAGE_THRESHOLDS = (0.01, 0.03, 0.05, 0.10)


# ---------------------------------------------------------------------------
# optimal assignment


def _hungarian_min_square(cost: np.ndarray) -> list[int]:
    """Shortest-augmenting-path Hungarian method; returns column for each row."""
    n = cost.shape[0]
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)      # p[j]: row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)
    c = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = inf, 0
            row = c[i0 - 1]
            ui = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


def hungarian_max(profit) -> tuple[list[tuple[int, int]], float]:
    """Maximum-profit one-to-one assignment of min(m, n) row/column pairs.

    Rectangular inputs are padded with zero-profit dummies. Returns the
    (row, column) pairs sorted by row and their total profit.
    """
    a = np.asarray(profit, dtype=np.float64)
    if a.size == 0:
        return [], 0.0
    if a.ndim != 2:
        raise ContractError(f"profit matrix must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ContractError("profit matrix must be finite")
    m, n = a.shape
    k = max(m, n)
    padded = np.zeros((k, k))
    padded[:m, :n] = a
    assign = _hungarian_min_square(-padded)
    pairs = [(i, assign[i]) for i in range(m) if assign[i] < n]
    return pairs, math.fsum(a[i, j] for i, j in pairs)


# ---------------------------------------------------------------------------
# word similarity


class SimilarityTable:
    """Deterministic per-token vectors; similarity is cosine clamped at zero."""

    def __init__(self, seed: int = 0, dim: int = 16, vectors: dict[str, np.ndarray] | None = None):
        self.seed, self.dim = seed, dim
        self._vectors: dict[str, np.ndarray] = {}
        for tok, vec in (vectors or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ContractError(f"vector for {tok!r} has shape {vec.shape}, expected ({dim},)")
            self._vectors[tok] = vec

    def vector(self, token: str) -> np.ndarray:
        vec = self._vectors.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}\x00{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = self._vectors[token] = rng.standard_normal(self.dim)
        return vec

    def similarity(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        va, vb = self.vector(a), self.vector(b)
        denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
        if denom == 0.0:
            return 0.0
        return min(1.0, max(0.0, float(va @ vb) / denom))

    def matrix(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        return np.array([[self.similarity(r, c) for c in cols] for r in rows], dtype=np.float64).reshape(len(rows), len(cols))

    def save(self, path, tokens: Iterable[str]):
        lines = [" ".join([t] + [repr(float(x)) for x in self.vector(t)]) for t in tokens]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, seed: int = 0) -> "SimilarityTable":
        vectors = {}
        dim = None
        for ln in Path(path).read_text(encoding="utf-8").splitlines():
            if not ln.strip():
                continue
            tok, *vals = ln.split()
            dim = dim or len(vals)
            vectors[tok] = np.array([float(v) for v in vals])
        return cls(seed=seed, dim=dim or 16, vectors=vectors)


# ---------------------------------------------------------------------------
# caption scores


def intersection_score(nouns: Sequence[str], categories: Sequence[str], table: SimilarityTable) -> float:
    if not nouns or not categories:
        return 0.0
    return hungarian_max(table.matrix(list(nouns), list(categories)))[1]


def coverage(nouns: Sequence[str], categories: Iterable[str], table: SimilarityTable) -> float:
    """Soft coverage of the ground-truth category set; an empty set counts as covered."""
    cats = sorted(set(categories))
    if not cats:
        return 1.0
    return intersection_score(nouns, cats, table) / len(cats)


def diversity(nouns_a: Sequence[str], nouns_b: Sequence[str], table: SimilarityTable) -> float:
    """Soft Jaccard distance between two noun multisets (0 when both are empty)."""
    if not nouns_a and not nouns_b:
        return 0.0
    inter = intersection_score(nouns_a, nouns_b, table)
    union = len(nouns_a) + len(nouns_b) - inter
    return 1.0 - inter / union


def categories_above(visible: Iterable[tuple[int, int, float]], threshold: float, names: Sequence[str]) -> set[str]:
    """Category names of visible objects whose area fraction exceeds ``threshold``."""
    return {names[cat] for _, cat, area in visible if area > threshold}


def surprisal_metric(episodes: Sequence[Sequence], window: int = 20) -> float:
    """Per episode, mean of raw-surprisal sums over consecutive ``window``-step blocks;
    then the mean over episodes. A trailing partial block is ignored."""
    if not episodes:
        raise ContractError("surprisal_metric needs at least one episode")
    per_episode = []
    for ep in episodes:
        vals = [float(getattr(r, "raw", r)) for r in ep]
        if len(vals) < window:
            raise ContractError(f"episode shorter than the {window}-step window")
        sums = [math.fsum(vals[i:i + window]) for i in range(0, len(vals) - window + 1, window)]
        per_episode.append(_mean(sums))
    return _mean(per_episode)


def _mean(values: Sequence[float]) -> float:
    # offset from the first value so equal inputs average back to themselves exactly
    base = values[0]
    return base + math.fsum(v - base for v in values) / len(values)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CellScores:
    policy: str
    threshold: float
    loquacity: float
    cov: dict[float, float] = field(default_factory=dict)
    div: float = 0.0
    captions: int = 0
    surprisal: float | None = None

    def record(self) -> dict:
        out = {"policy": self.policy, "threshold": self.threshold, "loquacity": self.loquacity,
               "captions": self.captions, "div": self.div}
        for t, v in self.cov.items():
            out[f"cov>{t:g}"] = v
        if self.surprisal is not None:
            out["surprisal"] = self.surprisal
        return out


@dataclass
class MetricsReport:
    cells: list[CellScores]
    surprisal: float | None = None
    replay: dict[tuple[str, float], float] = field(default_factory=dict)   # loquacity by re-triggering logged steps
    episodes: int = 0

    def to_lines(self) -> str:
        """Line-delimited JSON, one record per (policy, threshold) cell."""
        lines = [json.dumps(c.record(), sort_keys=True) for c in self.cells]
        for (kind, th), loq in self.replay.items():
            lines.append(json.dumps({"replay_policy": kind, "threshold": th, "loquacity": loq}, sort_keys=True))
        if self.surprisal is not None:
            lines.append(json.dumps({"navigation_surprisal": self.surprisal}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        head = "policy      thresh   loq     " + "  ".join(f"Cov>{int(t * 100)}%" for t in COVERAGE_THRESHOLDS) + "  Div"
        rows = [head, "-" * len(head)]
        for c in self.cells:
            covs = "  ".join(f"{c.cov.get(t, float('nan')):6.3f}" for t in COVERAGE_THRESHOLDS)
            rows.append(f"{c.policy:<11} {c.threshold:<8g} {c.loquacity:<7.1f} {covs}  {c.div:.3f}")
        if self.replay:
            rows.append("")
            rows.append(f"replayed loquacity over {self.episodes} logged episodes")
            for (kind, th), loq in self.replay.items():
                rows.append(f"{kind:<11} {th:<8g} {loq:.1f}")
        if self.surprisal is not None:
            rows.append(f"navigation surprisal (per 20 steps): {self.surprisal:.3f}")
        return "\n".join(rows) + "\n"
