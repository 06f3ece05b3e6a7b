"""Observation preprocessing, frame stacking and the frozen random embedding."""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .world import Observation

MODALITIES = ("gray", "depth", "gray+depth")
STACK = 4


@dataclass(frozen=True)
class PerceptionConfig:
    height: int = 32
    width: int = 32
    feature_dim: int = 512
    modality: str = "gray+depth"
    output_scale: float = 20.0
    seed: int = 1234

    def validate(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"perception.modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.height < 8 or self.width < 8:
            raise ContractError("perception.height and perception.width must be >= 8")
        if self.feature_dim < 1:
            raise ContractError("perception.feature_dim must be >= 1")
        if self.output_scale <= 0:
            raise ContractError("perception.output_scale must be > 0")

    @property
    def channels(self) -> int:
        return 2 if self.modality == "gray+depth" else 1


@dataclass(frozen=True)
class Frame:
    planes: np.ndarray   # (C, H, W) in [0, 1]
    modality: str


@lru_cache(maxsize=32)
def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Area-weighted 1-D resampling; every output row sums to one."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for j in range(n_out):
        lo, hi = j * ratio, (j + 1) * ratio
        for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                m[j, i] = overlap / ratio
    m.setflags(write=False)
    return m


def resample_row(row: np.ndarray, n_out: int) -> np.ndarray:
    return _resample_matrix(row.shape[0], n_out) @ row


def preprocess(obs: Observation, config: PerceptionConfig = PerceptionConfig()) -> Frame:
    """Resample the shade (and normalised depth) rows to H x W planes."""
    planes = []
    if config.modality in ("gray", "gray+depth"):
        planes.append(resample_row(obs.shade, config.width))
    if config.modality in ("depth", "gray+depth"):
        planes.append(resample_row(obs.depth_norm, config.width))
    rows = np.stack(planes)[:, None, :]
    arr = np.clip(np.broadcast_to(rows, (len(planes), config.height, config.width)), 0.0, 1.0)
    return Frame(arr.astype(np.float32), config.modality)


class FrameStack:
    """The four most recent frames, oldest first."""

    def __init__(self, first: Frame):
        self.reset(first)

    def reset(self, first: Frame):
        self.frames = deque([first] * STACK, maxlen=STACK)

    def push(self, frame: Frame):
        if frame.modality != self.frames[-1].modality:
            raise ContractError("frame modality changed mid-stack")
        self.frames.append(frame)

    @property
    def modality(self) -> str:
        return self.frames[-1].modality

    def array(self) -> np.ndarray:
        return np.concatenate([f.planes for f in self.frames], axis=0)


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    out_c, in_c, k, _ = w.shape
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, in_c * k * k)
    y = cols @ w.reshape(out_c, -1).T + b
    return y.T.reshape(out_c, ho, wo)


def _leaky(x):
    return np.where(x > 0, x, 0.01 * x)


class EmbeddingNet:
    """Randomly initialised, never trained: two strided convolutions and an affine map."""

    def __init__(self, config: PerceptionConfig = PerceptionConfig(), params: dict[str, np.ndarray] | None = None):
        config.validate()
        self.config = config
        in_c = STACK * config.channels
        h1 = (config.height - 4) // 2 + 1
        w1 = (config.width - 4) // 2 + 1
        h2, w2 = (h1 - 4) // 2 + 1, (w1 - 4) // 2 + 1
        flat = 32 * h2 * w2
        if params is None:
            rng = np.random.default_rng(config.seed)
            b1, b2, b3 = 1 / np.sqrt(in_c * 16), 1 / np.sqrt(16 * 16), 1 / np.sqrt(flat)
            params = {
                "phi.conv1.w": rng.uniform(-b1, b1, (16, in_c, 4, 4)),
                "phi.conv1.b": rng.uniform(-b1, b1, 16),
                "phi.conv2.w": rng.uniform(-b2, b2, (32, 16, 4, 4)),
                "phi.conv2.b": rng.uniform(-b2, b2, 32),
                "phi.out.w": rng.uniform(-b3, b3, (flat, config.feature_dim)) * config.output_scale,
                "phi.out.b": rng.uniform(-b3, b3, config.feature_dim) * config.output_scale,
            }
        expected = {"phi.conv1.w": (16, in_c, 4, 4), "phi.conv2.w": (32, 16, 4, 4),
                    "phi.out.w": (flat, config.feature_dim)}
        for name, shape in expected.items():
            if name not in params or tuple(np.shape(params[name])) != shape:
                raise ContractError(f"embedding parameter {name} missing or mis-shaped")
        self.params = {}
        for k, v in params.items():
            arr = np.array(v, dtype=np.float32)
            arr.setflags(write=False)
            self.params[k] = arr
        self._checksum = self.checksum()

    @property
    def dim(self) -> int:
        return self.config.feature_dim

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    def verify(self):
        if self.checksum() != self._checksum:
            raise ContractError("frozen embedding parameters changed")

    def state(self) -> dict[str, np.ndarray]:
        return dict(self.params)

    def embed_array(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        h = _leaky(_conv(x.astype(np.float32), p["phi.conv1.w"], p["phi.conv1.b"], 2))
        h = _leaky(_conv(h, p["phi.conv2.w"], p["phi.conv2.b"], 2))
        return (h.reshape(-1) @ p["phi.out.w"] + p["phi.out.b"]).astype(np.float32)


def embed(net: EmbeddingNet, stack: FrameStack) -> np.ndarray:
    if stack.modality != net.config.modality:
        raise ContractError(f"stack modality {stack.modality!r} does not match network {net.config.modality!r}")
    x = stack.array()
    if x.shape != (STACK * net.config.channels, net.config.height, net.config.width):
        raise ContractError(f"stack shape {x.shape} does not match the network input")
    return net.embed_array(x)
