"""Procedural indoor worlds on a square occupancy grid, with a raycast egocentric camera.

Coordinates are metres; cell ``(row, col)`` covers ``[col, col+1) x [row, row+1)``.
Heading 0 faces +x and grows clockwise on the map (y grows downwards), so
LEFT subtracts the rotation granularity.
"""
from __future__ import annotations

import enum
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, GenerationError

# Stand-in palette: fifteen object classes, none of them contextual (wall/floor/ceiling).
CATEGORIES = (
    "bed", "chair", "sofa", "table", "cabinet", "plant", "sink", "toilet",
    "television", "bathtub", "lamp", "shelf", "desk", "stool", "fireplace",
)
HEIGHT_WEIGHTS = (
    0.5, 0.6, 0.55, 0.5, 0.9, 0.7, 0.6, 0.5, 0.6, 0.45, 0.8, 1.0, 0.55, 0.4, 0.7,
)
N_CATEGORIES = len(CATEGORIES)


class Action(enum.IntEnum):
    FORWARD = 0
    LEFT = 1
    RIGHT = 2


N_ACTIONS = len(Action)


@dataclass(frozen=True)
class WorldConfig:
    grid_size: int = 64
    rooms: int = 9
    room_min: int = 5
    room_max: int = 12
    objects_min: int = 2
    objects_max: int = 6
    corridor_width: int = 2
    extra_corridors: int = 2
    rotation_deg: float = 15.0
    forward_step: float = 0.25
    fov_deg: float = 90.0
    width: int = 64
    max_range: float = 8.0
    clearance: float = 0.1

    def validate(self):
        if self.grid_size < 16:
            raise ContractError(f"world.grid_size must be >= 16, got {self.grid_size}")
        if self.rooms < 2:
            raise ContractError(f"world.rooms must be >= 2, got {self.rooms}")
        if not 2 <= self.room_min <= self.room_max:
            raise ContractError("world.room_min must be >= 2 and <= world.room_max")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ContractError("world.objects_min must be in [0, world.objects_max]")
        if self.corridor_width < 1:
            raise ContractError("world.corridor_width must be >= 1")
        if not 0 < self.rotation_deg < 360:
            raise ContractError("world.rotation_deg must be in (0, 360)")
        if not 0 < self.forward_step < 1:
            raise ContractError("world.forward_step must be in (0, 1)")
        if not 0 < self.fov_deg < 180:
            raise ContractError("world.fov_deg must be in (0, 180)")
        if self.width < 1:
            raise ContractError("world.width must be >= 1")
        if self.max_range <= 0:
            raise ContractError("world.max_range must be > 0")
        if not 0 <= self.clearance < 0.5:
            raise ContractError("world.clearance must be in [0, 0.5)")


@dataclass(frozen=True)
class WorldObject:
    instance: int
    category: int
    x0: float
    y0: float
    x1: float
    y1: float
    height_weight: float

    @property
    def name(self) -> str:
        return CATEGORIES[self.category]

    @property
    def cell(self) -> tuple[int, int]:
        return int(math.floor((self.y0 + self.y1) / 2)), int(math.floor((self.x0 + self.x1) / 2))


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: float

    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class EpisodeSpec:
    world_seed: int
    start: AgentPose
    length: int = 1000

    def __post_init__(self):
        if self.length < 1:
            raise ContractError("episode length must be >= 1")


@dataclass
class Observation:
    shade: np.ndarray      # (W,) in [0, 1]
    depth: np.ndarray      # (W,) metres in (0, max_range]
    semantic: np.ndarray   # (W,) instance ids, 0 = structure / nothing
    visible: list[tuple[int, int, float]]  # (instance, category, area fraction)
    max_range: float

    @property
    def depth_norm(self) -> np.ndarray:
        return self.depth / self.max_range

    @property
    def mean_depth(self) -> float:
        """Mean normalised depth over the columns."""
        return float(self.depth_norm.mean())

    @property
    def width(self) -> int:
        return int(self.shade.shape[0])


@dataclass(frozen=True, eq=False)
class WorldMap:
    grid: np.ndarray                      # (G, G) bool, True = occupied
    objects: tuple[WorldObject, ...]
    config: WorldConfig = WorldConfig()
    rooms: tuple[tuple[int, int, int, int], ...] = ()
    seed: int | None = None
    _segments: np.ndarray = field(default=None, repr=False)  # (S, 4) x0 y0 x1 y1
    _seg_ids: np.ndarray = field(default=None, repr=False)   # (S,) instance id, 0 = structure
    _seg_vertical: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        grid = np.ascontiguousarray(self.grid, dtype=bool)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        segs, ids, vert = _build_segments(grid, self.objects)
        object.__setattr__(self, "_segments", segs)
        object.__setattr__(self, "_seg_ids", ids)
        object.__setattr__(self, "_seg_vertical", vert)

    @property
    def size(self) -> int:
        return int(self.grid.shape[0])

    def object_by_id(self, instance: int) -> WorldObject:
        for o in self.objects:
            if o.instance == instance:
                return o
        raise KeyError(instance)

    def free_cells(self) -> np.ndarray:
        return ~self.grid

    def is_valid(self, pose: AgentPose) -> bool:
        return _point_clear(self, pose.x, pose.y, self.config.clearance)

    def to_text(self) -> str:
        """Structured text export: header, grid rows, then one object per line."""
        lines = ["curionav-world 1", f"seed {self.seed if self.seed is not None else '-'}",
                 f"size {self.size}", "grid"]
        lines += ["".join("#" if c else "." for c in row) for row in self.grid]
        lines.append(f"objects {len(self.objects)}")
        for o in self.objects:
            lines.append(f"{o.instance} {o.category} {o.name} {o.x0!r} {o.y0!r} {o.x1!r} {o.y1!r} {o.height_weight!r}")
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        return self.to_text().encode("ascii")

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_text(cls, text: str, config: WorldConfig | None = None) -> "WorldMap":
        lines = text.splitlines()
        if not lines or lines[0] != "curionav-world 1":
            raise ContractError("not a curionav world export")
        seed_tok = lines[1].split()[1]
        size = int(lines[2].split()[1])
        rows = lines[4:4 + size]
        grid = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
        n = int(lines[4 + size].split()[1])
        objs = []
        for ln in lines[5 + size:5 + size + n]:
            p = ln.split()
            objs.append(WorldObject(int(p[0]), int(p[1]), float(p[3]), float(p[4]), float(p[5]), float(p[6]), float(p[7])))
        cfg = config or WorldConfig(grid_size=size)
        return cls(grid, tuple(objs), cfg, seed=None if seed_tok == "-" else int(seed_tok))


# ---------------------------------------------------------------------------
# generation


def generate_world(seed: int, config: WorldConfig = WorldConfig()) -> WorldMap:
    config.validate()
    rng = np.random.default_rng(seed)
    g = config.grid_size
    grid = np.ones((g, g), dtype=bool)
    rooms: list[tuple[int, int, int, int]] = []   # row0, col0, row1, col1 (exclusive)
    taken = np.zeros((g, g), dtype=bool)
    for _ in range(200 * config.rooms):
        if len(rooms) == config.rooms:
            break
        h = int(rng.integers(config.room_min, config.room_max + 1))
        w = int(rng.integers(config.room_min, config.room_max + 1))
        if h > g - 2 or w > g - 2:
            continue
        r0 = int(rng.integers(1, g - 1 - h + 1))
        c0 = int(rng.integers(1, g - 1 - w + 1))
        if taken[max(r0 - 1, 0):r0 + h + 1, max(c0 - 1, 0):c0 + w + 1].any():
            continue
        taken[r0:r0 + h, c0:c0 + w] = True
        rooms.append((r0, c0, r0 + h, c0 + w))
    if len(rooms) < config.rooms:
        raise GenerationError(
            f"could only place {len(rooms)} of {config.rooms} rooms on a {g}x{g} grid"
        )
    for r0, c0, r1, c1 in rooms:
        grid[r0:r1, c0:c1] = False

    centers = [((r0 + r1 - 1) // 2, (c0 + c1 - 1) // 2) for r0, c0, r1, c1 in rooms]
    for a, b in _corridor_plan(centers, config.extra_corridors, rng):
        _carve_corridor(grid, centers[a], centers[b], config.corridor_width, bool(rng.integers(2)), g)

    objects = _place_objects(grid, rooms, config, rng)
    world = WorldMap(grid, tuple(objects), config, tuple(rooms), seed=seed)
    problems = check_world_invariants(world)
    if problems:
        raise GenerationError("generated world violates invariants: " + "; ".join(problems))
    return world


def _corridor_plan(centers, extra: int, rng) -> list[tuple[int, int]]:
    n = len(centers)
    dist = lambda i, j: abs(centers[i][0] - centers[j][0]) + abs(centers[i][1] - centers[j][1])
    in_tree = {0}
    edges = []
    while len(in_tree) < n:
        best = min(((dist(i, j), i, j) for i in in_tree for j in range(n) if j not in in_tree))
        edges.append((best[1], best[2]))
        in_tree.add(best[2])
    others = [(i, j) for i in range(n) for j in range(i + 1, n)
              if (i, j) not in edges and (j, i) not in edges]
    if others and extra > 0:
        picks = rng.choice(len(others), size=min(extra, len(others)), replace=False)
        edges += [others[int(k)] for k in sorted(picks)]
    return edges


def _carve_corridor(grid, a, b, width, horizontal_first, g):
    (ra, ca), (rb, cb) = a, b
    corner = (ra, cb) if horizontal_first else (rb, ca)
    for (r0, c0), (r1, c1) in ((a, corner), (corner, b)):
        rlo, rhi = sorted((r0, r1))
        clo, chi = sorted((c0, c1))
        grid[max(rlo, 1):min(rhi + width, g - 1), max(clo, 1):min(chi + width, g - 1)] = False


def _flood(free: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    seen = np.zeros_like(free)
    if not free[start]:
        return seen
    q = deque([start])
    seen[start] = True
    g0, g1 = free.shape
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < g0 and 0 <= nc < g1 and free[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                q.append((nr, nc))
    return seen


def _connected(free: np.ndarray) -> bool:
    cells = np.argwhere(free)
    if len(cells) == 0:
        return False
    return int(_flood(free, tuple(cells[0])).sum()) == len(cells)


def _place_objects(grid, rooms, config: WorldConfig, rng) -> list[WorldObject]:
    g = grid.shape[0]
    objects: list[WorldObject] = []
    blocked = grid.copy()
    next_id = 1
    for r0, c0, r1, c1 in rooms:
        room_mask = np.zeros_like(grid)
        room_mask[r0:r1, c0:c1] = True
        # doorway-adjacent cells stay clear so corridors are never plugged
        candidates = []
        for r in range(r0, r1):
            for c in range(c0, c1):
                walls = []
                near_door = False
                for dr, dc, side in ((-1, 0, "n"), (1, 0, "s"), (0, -1, "w"), (0, 1, "e")):
                    nr, nc = r + dr, c + dc
                    if grid[nr, nc]:
                        walls.append(side)
                    elif not room_mask[nr, nc]:
                        near_door = True
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        nr, nc = r + dr, c + dc
                        if not grid[nr, nc] and not room_mask[nr, nc]:
                            near_door = True
                if walls and not near_door and not grid[r, c]:
                    candidates.append((r, c, walls))
        want = int(rng.integers(config.objects_min, config.objects_max + 1))
        order = rng.permutation(len(candidates)) if candidates else []
        placed = 0
        for k in order:
            if placed >= want:
                break
            r, c, walls = candidates[int(k)]
            if blocked[r, c]:
                continue
            trial = blocked.copy()
            trial[r, c] = True
            if not _connected(~trial):
                continue
            cat = int(rng.integers(N_CATEGORIES))
            w = float(rng.uniform(0.5, 0.85))
            h = float(rng.uniform(0.5, 0.85))
            side = walls[int(rng.integers(len(walls)))]
            x0 = c + (1 - w) / 2
            y0 = r + (1 - h) / 2
            if side == "n":
                y0 = float(r)
            elif side == "s":
                y0 = r + 1 - h
            elif side == "w":
                x0 = float(c)
            else:
                x0 = c + 1 - w
            objects.append(WorldObject(next_id, cat, x0, y0, x0 + w, y0 + h, HEIGHT_WEIGHTS[cat]))
            next_id += 1
            blocked = trial
            placed += 1
    return objects


def check_world_invariants(world: WorldMap) -> list[str]:
    """Empty list when every structural invariant holds."""
    grid = world.grid
    problems = []
    if grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all():
        pass
    else:
        problems.append("border not fully occupied")
    if world.rooms and len(world.rooms) < 2:
        problems.append("fewer than 2 rooms")
    free = ~grid
    if not _connected(free):
        problems.append("free cells not mutually reachable")
    blocked = grid.copy()
    for o in world.objects:
        r, c = o.cell
        if grid[r, c]:
            problems.append(f"object {o.instance} in occupied cell")
            continue
        if not (c <= o.x0 < o.x1 <= c + 1 and r <= o.y0 < o.y1 <= r + 1):
            problems.append(f"object {o.instance} footprint leaves its cell")
        if not (grid[r - 1, c] or grid[r + 1, c] or grid[r, c - 1] or grid[r, c + 1]):
            problems.append(f"object {o.instance} not adjacent to structure")
        if not 0 <= o.category < N_CATEGORIES:
            problems.append(f"object {o.instance} has bad category")
        blocked[r, c] = True
    if world.objects and not _connected(~blocked):
        problems.append("objects disconnect the free space")
    return problems


# ---------------------------------------------------------------------------
# rendering


def _build_segments(grid: np.ndarray, objects: Sequence[WorldObject]):
    g0, g1 = grid.shape
    segs, ids, vert = [], [], []
    # horizontal edges between rows r-1 and r, merged into maximal runs
    for r in range(1, g0):
        diff = grid[r - 1] != grid[r]
        c = 0
        while c < g1:
            if diff[c]:
                start = c
                while c < g1 and diff[c]:
                    c += 1
                segs.append((start, r, c, r))
                ids.append(0)
                vert.append(False)
            else:
                c += 1
    for c in range(1, g1):
        diff = grid[:, c - 1] != grid[:, c]
        r = 0
        while r < g0:
            if diff[r]:
                start = r
                while r < g0 and diff[r]:
                    r += 1
                segs.append((c, start, c, r))
                ids.append(0)
                vert.append(True)
            else:
                r += 1
    for o in objects:
        segs += [(o.x0, o.y0, o.x1, o.y0), (o.x0, o.y1, o.x1, o.y1),
                 (o.x0, o.y0, o.x0, o.y1), (o.x1, o.y0, o.x1, o.y1)]
        ids += [o.instance] * 4
        vert += [False, False, True, True]
    return (np.asarray(segs, dtype=np.float64).reshape(-1, 4),
            np.asarray(ids, dtype=np.int64), np.asarray(vert, dtype=bool))


def column_offsets(config: WorldConfig) -> np.ndarray:
    """Per-column angular offset (radians) from the heading; negative = left."""
    w = config.width
    t = math.tan(math.radians(config.fov_deg) / 2)
    return np.arctan((2 * (np.arange(w) + 0.5) / w - 1.0) * t)


_CATEGORY_SHADE = np.linspace(0.25, 0.95, N_CATEGORIES)


def render_observation(world: WorldMap, pose: AgentPose) -> Observation:
    cfg = world.config
    offsets = column_offsets(cfg)
    angles = math.radians(pose.heading) + offsets
    dx, dy = np.cos(angles), np.sin(angles)
    px, py = pose.x, pose.y
    reach = cfg.max_range / math.cos(max(abs(offsets[0]), abs(offsets[-1]))) + 1e-9

    segs = world._segments
    near = ((np.minimum(segs[:, 0], segs[:, 2]) <= px + reach) & (np.maximum(segs[:, 0], segs[:, 2]) >= px - reach)
            & (np.minimum(segs[:, 1], segs[:, 3]) <= py + reach) & (np.maximum(segs[:, 1], segs[:, 3]) >= py - reach))
    s = segs[near]
    ids = world._seg_ids[near]
    vert = world._seg_vertical[near]
    w = cfg.width
    depth = np.full(w, cfg.max_range)
    semantic = np.zeros(w, dtype=np.int64)
    shade = np.zeros(w)
    if len(s):
        ex = (s[:, 2] - s[:, 0])[None, :]
        ey = (s[:, 3] - s[:, 1])[None, :]
        ax = (s[:, 0] - px)[None, :]
        ay = (s[:, 1] - py)[None, :]
        rdx, rdy = dx[:, None], dy[:, None]
        denom = rdx * ey - rdy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ax * ey - ay * ex) / denom
            u = (ax * rdy - ay * rdx) / denom
        ok = (denom != 0) & (t > 0) & (u >= 0) & (u <= 1)
        t = np.where(ok, t, np.inf)
        best = t.argmin(axis=1)
        tmin = t[np.arange(w), best]
        z = tmin * np.cos(offsets)
        hit = np.isfinite(tmin) & (z <= cfg.max_range)
        depth = np.where(hit, z, cfg.max_range)
        semantic = np.where(hit, ids[best], 0)
        cats = np.zeros(w, dtype=np.int64)
        obj_cat = {o.instance: o.category for o in world.objects}
        for i in np.nonzero(semantic)[0]:
            cats[i] = obj_cat[int(semantic[i])]
        wall = np.where(vert[best], 0.7, 0.5)
        base = np.where(semantic > 0, _CATEGORY_SHADE[cats], wall)
        shade = np.where(hit, base / (1.0 + 0.15 * depth), 0.0)
    visible = []
    if semantic.any():
        inst, counts = np.unique(semantic[semantic > 0], return_counts=True)
        for i, n in zip(inst, counts):
            o = world.object_by_id(int(i))
            visible.append((int(i), o.category, float(n) * o.height_weight / w))
    return Observation(shade=shade, depth=depth, semantic=semantic, visible=visible, max_range=cfg.max_range)


# ---------------------------------------------------------------------------
# motion


def _segment_hits_box(x0, y0, x1, y1, bx0, by0, bx1, by1) -> bool:
    """Slab test for the closed segment against a closed box."""
    tlo, thi = 0.0, 1.0
    for p, d, lo, hi in ((x0, x1 - x0, bx0, bx1), (y0, y1 - y0, by0, by1)):
        if d == 0.0:
            if p < lo or p > hi:
                return False
            continue
        ta, tb = (lo - p) / d, (hi - p) / d
        if ta > tb:
            ta, tb = tb, ta
        tlo, thi = max(tlo, ta), min(thi, tb)
        if tlo > thi:
            return False
    return True


def _segment_clear(world: WorldMap, x0, y0, x1, y1, r: float) -> bool:
    g = world.size
    cmin, cmax = int(math.floor(min(x0, x1) - r)) - 1, int(math.floor(max(x0, x1) + r)) + 1
    rmin, rmax = int(math.floor(min(y0, y1) - r)) - 1, int(math.floor(max(y0, y1) + r)) + 1
    for row in range(max(rmin, 0), min(rmax, g - 1) + 1):
        for col in range(max(cmin, 0), min(cmax, g - 1) + 1):
            if world.grid[row, col] and _segment_hits_box(x0, y0, x1, y1, col - r, row - r, col + 1 + r, row + 1 + r):
                return False
    if cmin < 0 or rmin < 0 or cmax >= g or rmax >= g:
        if not (r <= min(x0, x1) and max(x0, x1) <= g - r and r <= min(y0, y1) and max(y0, y1) <= g - r):
            return False
    for o in world.objects:
        if _segment_hits_box(x0, y0, x1, y1, o.x0 - r, o.y0 - r, o.x1 + r, o.y1 + r):
            return False
    return True


def _point_clear(world: WorldMap, x, y, r) -> bool:
    return _segment_clear(world, x, y, x, y, r)


def step(world: WorldMap, pose: AgentPose, action) -> AgentPose:
    action = Action(int(action))
    cfg = world.config
    if action is Action.LEFT:
        return AgentPose(pose.x, pose.y, (pose.heading - cfg.rotation_deg) % 360.0)
    if action is Action.RIGHT:
        return AgentPose(pose.x, pose.y, (pose.heading + cfg.rotation_deg) % 360.0)
    rad = math.radians(pose.heading)
    nx = pose.x + cfg.forward_step * math.cos(rad)
    ny = pose.y + cfg.forward_step * math.sin(rad)
    if _segment_clear(world, pose.x, pose.y, nx, ny, cfg.clearance):
        return AgentPose(nx, ny, pose.heading)
    return pose


def sample_start(world: WorldMap, rng: np.random.Generator) -> AgentPose:
    blocked = world.grid.copy()
    for o in world.objects:
        blocked[o.cell] = True
    cells = np.argwhere(~blocked)
    turns = int(round(360.0 / world.config.rotation_deg))
    for _ in range(1000):
        r, c = cells[int(rng.integers(len(cells)))]
        pose = AgentPose(c + 0.5, r + 0.5, (int(rng.integers(turns)) * world.config.rotation_deg) % 360.0)
        if world.is_valid(pose):
            return pose
    raise GenerationError("no valid start pose found")


def make_episode(world_seed: int, config: WorldConfig = WorldConfig(), length: int = 1000,
                 start_seed: int | None = None) -> tuple[WorldMap, EpisodeSpec]:
    world = generate_world(world_seed, config)
    rng = np.random.default_rng(world_seed if start_seed is None else start_seed)
    return world, EpisodeSpec(world_seed, sample_start(world, rng), length)


# ---------------------------------------------------------------------------
# coverage and maps


def visited_coverage(world: WorldMap, trajectory: Iterable) -> float:
    """Fraction of free cells whose centre is within one cell of a visited position."""
    pts = np.array([(p.x, p.y) if isinstance(p, AgentPose) else tuple(p) for p in trajectory], dtype=np.float64)
    if len(pts) == 0:
        return 0.0
    return float(_covered_cells(world, pts).sum()) / float((~world.grid).sum())


def _covered_cells(world: WorldMap, pts: np.ndarray) -> np.ndarray:
    g = world.size
    pts = np.unique(pts, axis=0)
    base_c = np.floor(pts[:, 0]).astype(int)
    base_r = np.floor(pts[:, 1]).astype(int)
    mark = np.zeros((g, g), dtype=bool)
    for dr in range(-2, 3):
        for dc in range(-2, 3):
            r = base_r + dr
            c = base_c + dc
            ok = (r >= 0) & (r < g) & (c >= 0) & (c < g)
            d2 = (c + 0.5 - pts[:, 0]) ** 2 + (r + 0.5 - pts[:, 1]) ** 2
            ok &= d2 <= 1.0
            mark[r[ok], c[ok]] = True
    return mark & ~world.grid


def render_trajectory_map(world: WorldMap, trajectory: Sequence, scale: int = 4) -> bytes:
    """Top-down binary PGM (P5): walls black, free white, path as a dark-by-time ramp."""
    g = world.size
    img = np.where(world.grid, 0, 255).astype(np.uint8)
    img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    for o in world.objects:
        img[int(o.y0 * scale):int(math.ceil(o.y1 * scale)), int(o.x0 * scale):int(math.ceil(o.x1 * scale))] = 170
    pts = [(p.x, p.y) if isinstance(p, AgentPose) else tuple(p) for p in trajectory]
    n = len(pts)
    for i, (x, y) in enumerate(pts):
        shade = 200 - int(round(140 * i / max(n - 1, 1)))
        img[min(int(y * scale), g * scale - 1), min(int(x * scale), g * scale - 1)] = shade
    if pts:
        sx, sy = int(pts[0][0] * scale), int(pts[0][1] * scale)
        img[max(sy - 2, 0):sy + 3, max(sx - 2, 0):sx + 3] = 40
    header = f"P5\n{g * scale} {g * scale}\n255\n".encode("ascii")
    return header + img.tobytes()
