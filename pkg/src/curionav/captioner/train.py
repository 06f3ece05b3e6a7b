"""Cross-entropy training with a warmup schedule, evaluation and persistence."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .. import checkpoint
from ..errors import CheckpointVersionError, ContractError
from ..tensor import adam_step, no_grad, softmax_cross_entropy
from .data import CaptionPair, encode_pairs
from .model import CaptionConfig, CaptionModel
from .vocab import Vocabulary

_CONFIG_KEYS = ("d", "heads", "layers", "ff", "max_len")


def noam_rate(step: int, d: int, warmup: int, factor: float = 1.0) -> float:
    """Linear warmup for ``warmup`` steps, then inverse square-root decay."""
    step = max(step, 1)
    return factor * d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def batch_loss(model: CaptionModel, pairs: Sequence[CaptionPair], vocab: Vocabulary):
    feats, mask, inputs, targets = encode_pairs(pairs, vocab, model.cfg.max_len)
    enc = model.encode_batch(feats, mask)
    logits = model.decode_logits(inputs, enc)
    return softmax_cross_entropy(logits, targets, weights=targets != vocab.pad)


def teacher_forced_accuracy(model: CaptionModel, pairs: Sequence[CaptionPair], vocab: Vocabulary,
                            batch: int = 256) -> float:
    """Fraction of non-PAD target tokens predicted correctly given the true prefix."""
    hit = total = 0
    was = model.training
    model.training = False
    with no_grad():
        for i in range(0, len(pairs), batch):
            feats, mask, inputs, targets = encode_pairs(pairs[i:i + batch], vocab, model.cfg.max_len)
            pred = model.decode_logits(inputs, model.encode_batch(feats, mask)).data.argmax(-1)
            keep = targets != vocab.pad
            hit += int(((pred == targets) & keep).sum())
            total += int(keep.sum())
    model.training = was
    return hit / total if total else 0.0


def mean_loss(model: CaptionModel, pairs: Sequence[CaptionPair], vocab: Vocabulary, batch: int = 256) -> float:
    was = model.training
    model.training = False
    tot = cnt = 0.0
    with no_grad():
        for i in range(0, len(pairs), batch):
            chunk = pairs[i:i + batch]
            _, _, _, targets = encode_pairs(chunk, vocab, model.cfg.max_len)
            w = float((targets != vocab.pad).sum())
            tot += float(batch_loss(model, chunk, vocab).data) * w
            cnt += w
    model.training = was
    return tot / cnt


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    heldout_accuracy: float = 0.0
    heldout_loss: float = 0.0
    steps: int = 0


def split_pairs(pairs: Sequence[CaptionPair], heldout: float) -> tuple[list, list]:
    n_test = max(1, int(round(len(pairs) * heldout)))
    return list(pairs[:-n_test]), list(pairs[-n_test:])


def train_ce(model: CaptionModel, train: Sequence[CaptionPair], vocab: Vocabulary, epochs: int | None = None,
             heldout: Sequence[CaptionPair] = (), seed: int = 0,
             on_epoch: Callable[[int, float], None] | None = None) -> TrainReport:
    """Teacher-forced cross-entropy on next-token targets, PAD positions masked."""
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(seed)
    report = TrainReport()
    model.training = True
    try:
        for ep in range(epochs):
            order = rng.permutation(len(train))
            losses, weights = [], []
            for i in range(0, len(order), cfg.batch):
                chunk = [train[j] for j in order[i:i + cfg.batch]]
                model.store.zero_grad()
                loss = batch_loss(model, chunk, vocab)
                loss.backward()
                lr = noam_rate(model.store.step + 1, cfg.d, cfg.warmup, cfg.lr_factor)
                adam_step(model.store, model.store.grads(), lr, beta1=0.9, beta2=0.98, eps=1e-9)
                losses.append(float(loss.data))
                weights.append(len(chunk))
                report.steps += 1
            report.epoch_losses.append(float(np.average(losses, weights=weights)))
            if on_epoch:
                on_epoch(ep, report.epoch_losses[-1])
    finally:
        model.training = False
    if heldout:
        report.heldout_accuracy = teacher_forced_accuracy(model, heldout, vocab)
        report.heldout_loss = mean_loss(model, heldout, vocab)
    return report


def save_model(path, model: CaptionModel):
    tensors = dict(model.state())
    tensors["meta.config"] = np.array([getattr(model.cfg, k) for k in _CONFIG_KEYS] + [model.vocab_size],
                                      dtype=np.float32)
    checkpoint.save(path, tensors)


def load_model(path, vocab: Vocabulary, cfg: CaptionConfig = CaptionConfig()) -> CaptionModel:
    tensors, _ = checkpoint.load(path)
    if "meta.config" not in tensors:
        raise CheckpointVersionError("checkpoint has no captioner metadata")
    meta = [int(x) for x in tensors.pop("meta.config")]
    values = dict(zip(_CONFIG_KEYS, meta[:-1]))
    if meta[-1] != len(vocab):
        raise ContractError(f"checkpoint vocabulary size {meta[-1]} != loaded vocabulary {len(vocab)}")
    model = CaptionModel(len(vocab), replace(cfg, **values), bos=vocab.bos, eos=vocab.eos)
    for name, t in model.store.params.items():
        if name not in tensors or tensors[name].shape != t.shape:
            raise ContractError(f"checkpoint parameter {name} missing or mis-shaped")
        t.data = tensors[name].astype(t.data.dtype)
    return model
