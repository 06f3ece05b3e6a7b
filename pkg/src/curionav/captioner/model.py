"""Region encoder and masked language decoder built from scaled dot-product attention."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from ..layers import Linear
from ..tensor import (ParamStore, Tensor, as_tensor, dropout, gelu, getitem, layer_norm, log_softmax,
                      matmul, mul, no_grad, reshape, softmax, swap_last, take_rows, transpose)
from .regions import FEATURE_DIM, RegionSet

LAYER_CHOICES = (1, 2, 3, 6)


@dataclass(frozen=True)
class CaptionConfig:
    d: int = 64
    heads: int = 4
    layers: int = 2
    ff: int = 256
    keep: float = 0.9
    max_len: int = 20
    beam: int = 5
    warmup: int = 400
    lr_factor: float = 1.0
    epochs: int = 12
    batch: int = 64
    dataset_size: int = 6000
    heldout: float = 0.1
    min_area: float = 0.01
    seed: int = 7

    def validate(self):
        if self.d % self.heads:
            raise ContractError(f"captioner.d ({self.d}) must be divisible by captioner.heads ({self.heads})")
        if self.layers not in LAYER_CHOICES:
            raise ContractError(f"captioner.layers must be one of {LAYER_CHOICES}, got {self.layers}")
        if not 0 < self.keep <= 1:
            raise ContractError("captioner.keep must be in (0, 1]")
        if self.max_len < 2 or self.beam < 1:
            raise ContractError("captioner.max_len >= 2 and captioner.beam >= 1")
        if not 0 < self.heldout < 1:
            raise ContractError("captioner.heldout must be in (0, 1)")
        if self.dataset_size < 10 or self.batch < 1 or self.epochs < 0 or self.warmup < 1:
            raise ContractError("captioner.dataset_size >= 10, batch >= 1, epochs >= 0, warmup >= 1")


def attention(q, k, v, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes; ``mask`` True = may attend."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if k.shape[-2] == 0:
        raise ContractError("attention over an empty key set")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention key count {k.shape[-2]} != value count {v.shape[-2]}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1, mask=mask), v)


def sinusoid_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d: int, heads: int, rng: np.random.Generator):
        self.d, self.heads = d, heads
        self.q = Linear(store, f"{name}.q", d, d, rng)
        self.k = Linear(store, f"{name}.k", d, d, rng)
        self.v = Linear(store, f"{name}.v", d, d, rng)
        self.o = Linear(store, f"{name}.o", d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return transpose(reshape(x, (b, t, self.heads, self.d // self.heads)), (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        out = attention(self._split(self.q(x_q)), self._split(self.k(x_kv)), self._split(self.v(x_kv)), mask)
        b, _, t, _ = out.shape
        return self.o(reshape(transpose(out, (0, 2, 1, 3)), (b, t, self.d)))


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d: int, ff: int, rng: np.random.Generator):
        self.l1 = Linear(store, f"{name}.l1", d, ff, rng)
        self.l2 = Linear(store, f"{name}.l2", ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(gelu(self.l1(x)))


class Norm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.g = store.add(f"{name}.g", np.ones(d))
        self.b = store.add(f"{name}.b", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)


class EncoderLayer:
    def __init__(self, store, name, cfg: CaptionConfig, rng):
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d, cfg.heads, rng)
        self.n1 = Norm(store, f"{name}.n1", cfg.d)
        self.ff = FeedForward(store, f"{name}.ff", cfg.d, cfg.ff, rng)
        self.n2 = Norm(store, f"{name}.n2", cfg.d)

    def __call__(self, x: Tensor, key_mask, drop) -> Tensor:
        x = self.n1(x + drop(self.attn(x, x, key_mask)))
        return self.n2(x + drop(self.ff(x)))


class DecoderLayer:
    def __init__(self, store, name, cfg: CaptionConfig, rng):
        self.self_attn = MultiHeadAttention(store, f"{name}.self", cfg.d, cfg.heads, rng)
        self.n1 = Norm(store, f"{name}.n1", cfg.d)
        self.cross = MultiHeadAttention(store, f"{name}.cross", cfg.d, cfg.heads, rng)
        self.n2 = Norm(store, f"{name}.n2", cfg.d)
        self.ff = FeedForward(store, f"{name}.ff", cfg.d, cfg.ff, rng)
        self.n3 = Norm(store, f"{name}.n3", cfg.d)

    def __call__(self, y: Tensor, enc: Tensor, causal, key_mask, drop) -> Tensor:
        y = self.n1(y + drop(self.self_attn(y, y, causal)))
        y = self.n2(y + drop(self.cross(y, enc, key_mask)))
        return self.n3(y + drop(self.ff(y)))


@dataclass
class EncodedRegions:
    states: Tensor     # (B, N, d)
    mask: np.ndarray   # (B, N) True for real regions

    def __len__(self):
        return self.states.shape[1]


class CaptionModel:
    def __init__(self, vocab_size: int, cfg: CaptionConfig = CaptionConfig(), seed: int | None = None,
                 bos: int = 1, eos: int = 2):
        cfg.validate()
        self.cfg, self.vocab_size = cfg, vocab_size
        self.bos, self.eos = bos, eos
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.store = ParamStore()
        s = self.store
        self.lift = Linear(s, "cap.lift", FEATURE_DIM, cfg.d, rng)
        self.enc = [EncoderLayer(s, f"cap.enc{i}", cfg, rng) for i in range(cfg.layers)]
        self.embed = s.add("cap.embed", rng.uniform(-1, 1, (vocab_size, cfg.d)) / math.sqrt(cfg.d))
        self.dec = [DecoderLayer(s, f"cap.dec{i}", cfg, rng) for i in range(cfg.layers)]
        self.out = Linear(s, "cap.out", cfg.d, vocab_size, rng)
        self.positions = sinusoid_positions(cfg.max_len, cfg.d)
        self.dropout_rng = np.random.default_rng(rng.integers(2**63))
        self.training = False

    def _drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.cfg.keep, self.dropout_rng, self.training)

    # -- encoder ---------------------------------------------------------
    def encode_batch(self, features: np.ndarray, mask: np.ndarray) -> EncodedRegions:
        """Encode padded region batches (B, N, F) with ``mask`` marking real rows.

        Each set is sorted into a canonical order before encoding and the
        outputs are scattered back, so permuting the input permutes the
        output bit-for-bit.
        """
        features = np.asarray(features)
        mask = np.asarray(mask, bool)
        if features.ndim != 3 or features.shape[-1] != FEATURE_DIM or mask.shape != features.shape[:2]:
            raise DimensionError(f"region batch shape {features.shape} / mask {mask.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("every region set needs at least one region")
        b, n, _ = features.shape
        order = np.stack([np.lexsort(tuple(features[i].T[::-1]) + (~mask[i],)) for i in range(b)])
        inverse = np.argsort(order, axis=1)
        rows = np.arange(b)[:, None]
        sorted_mask = mask[rows, order]
        x = self._drop(self.lift(Tensor(features[rows, order].astype(self.embed.data.dtype))))
        key_mask = sorted_mask[:, None, None, :]
        for layer in self.enc:
            x = layer(x, key_mask, self._drop)
        return EncodedRegions(getitem(x, (rows, inverse)), mask)

    def encode_regions(self, regions: RegionSet | np.ndarray) -> EncodedRegions:
        feats = regions.features if isinstance(regions, RegionSet) else np.asarray(regions)
        return self.encode_batch(feats[None], np.ones((1, feats.shape[0]), bool))

    # -- decoder ---------------------------------------------------------
    def decode_logits(self, tokens: np.ndarray, enc: EncodedRegions) -> Tensor:
        """Logits (B, T, V) for next-token prediction at every prefix position."""
        tokens = np.atleast_2d(np.asarray(tokens, np.int64))
        b, t = tokens.shape
        if t > self.cfg.max_len:
            raise ContractError(f"sequence length {t} exceeds the maximum of {self.cfg.max_len}")
        if enc.states.shape[0] != b:
            raise DimensionError(f"token batch {b} does not match encoded batch {enc.states.shape[0]}")
        y = mul(take_rows(self.embed, tokens), math.sqrt(self.cfg.d)) + Tensor(self.positions[:t].astype(self.embed.data.dtype))
        y = self._drop(y)
        causal = np.tril(np.ones((t, t), bool))[None, None]
        key_mask = enc.mask[:, None, None, :]
        for layer in self.dec:
            y = layer(y, enc.states, causal, key_mask, self._drop)
        return self.out(y)

    def log_probs(self, tokens, enc: EncodedRegions) -> np.ndarray:
        with no_grad():
            return log_softmax(self.decode_logits(tokens, enc)).data

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.store.params.items()}


def decode_step(model: CaptionModel, tokens, enc: EncodedRegions) -> np.ndarray:
    """Probability vector over the vocabulary for the token after ``tokens``."""
    tokens = list(tokens)
    if not tokens or tokens[0] != model.bos:
        raise ContractError("decode_step input must begin with the start token")
    lp = model.log_probs(np.array([tokens]), enc)[0, -1].astype(np.float64)
    return np.exp(lp - np.logaddexp.reduce(lp))
