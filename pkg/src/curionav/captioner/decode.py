"""Greedy and beam-search caption decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CaptionModel, EncodedRegions


@dataclass(frozen=True)
class Caption:
    tokens: tuple[int, ...]   # generated tokens, start token excluded, EOS included when emitted
    logprob: float            # summed log-probability of ``tokens``

    @property
    def score(self) -> float:
        return self.logprob / max(1, len(self.tokens))


def _expand_once(model: CaptionModel, prefixes: list[tuple[int, ...]], enc: EncodedRegions) -> np.ndarray:
    """Next-token log-probabilities for each prefix (all prefixes share a length)."""
    tokens = np.array([(model.bos,) + p for p in prefixes], np.int64)
    states = enc.states.data
    batch = EncodedRegions(type(enc.states)(np.repeat(states, len(prefixes), axis=0)),
                           np.repeat(enc.mask, len(prefixes), axis=0))
    return model.log_probs(tokens, batch)[:, -1].astype(np.float64)


def greedy_decode(model: CaptionModel, enc: EncodedRegions, max_len: int | None = None) -> Caption:
    limit = (max_len or model.cfg.max_len) - 1
    seq: tuple[int, ...] = ()
    total = 0.0
    while len(seq) < limit:
        lp = _expand_once(model, [seq], enc)[0]
        tok = int(np.argmax(lp))
        seq += (tok,)
        total += float(lp[tok])
        if tok == model.eos:
            break
    return Caption(seq, total)


def beam_search(model: CaptionModel, enc: EncodedRegions, beam: int | None = None,
                max_len: int | None = None) -> Caption:
    """Best completed hypothesis by length-normalised log-probability.

    A hypothesis completes when it emits EOS or reaches ``max_len - 1``
    generated tokens (the decoder input, start token included, never exceeds
    ``max_len``). Ties are broken towards lower token ids, earlier beams first.
    """
    beam = beam or model.cfg.beam
    max_len = max_len or model.cfg.max_len
    limit = max_len - 1
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    done: list[Caption] = []
    while live:
        lp = _expand_once(model, [p for p, _ in live], enc)
        cand = []
        for b, (prefix, score) in enumerate(live):
            for tok in range(lp.shape[1]):
                cand.append((score + lp[b, tok], b, lp[b, tok], tok))
        # highest score first; ties go to the earlier beam, then the likelier token, then the lower id
        cand.sort(key=lambda c: (-c[0], c[1], -c[2], c[3]))
        nxt = []
        for score, b, _, tok in cand[:beam]:
            seq = live[b][0] + (tok,)
            if tok == model.eos or len(seq) >= limit:
                done.append(Caption(seq, float(score)))
            else:
                nxt.append((seq, float(score)))
        live = nxt
        if len(done) >= beam:
            break
    best = done[0]
    for c in done[1:]:
        if c.score > best.score:
            best = c
    return best
