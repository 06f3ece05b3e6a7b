"""Caption vocabulary with noun flags and category links."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..errors import ContractError, DependencyError
from ..world import CATEGORIES

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)
FUNCTION_WORDS = ("a", "an", "empty", "with", "and", "near", "beside", "there", "is")
EXTRA_NOUNS = ("room",)


@dataclass
class Vocabulary:
    tokens: list[str]
    nouns: set[str] = field(default_factory=set)
    links: dict[str, int] = field(default_factory=dict)   # noun -> category id

    def __post_init__(self):
        if len(self.tokens) > 256:
            raise ContractError("vocabulary larger than 256 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractError("duplicate tokens in vocabulary")
        for s in SPECIALS:
            if s not in self.tokens:
                raise ContractError(f"vocabulary lacks special token {s}")
            if s in self.nouns:
                raise ContractError(f"special token {s} flagged as a noun")
        if sorted(self.links.values()) != list(range(len(CATEGORIES))):
            raise ContractError("category links must cover every category exactly once")
        for tok in self.links:
            if tok not in self.nouns:
                raise ContractError(f"category-linked token {tok!r} is not a noun")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.by_category = {c: t for t, c in self.links.items()}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad(self) -> int:
        return self.index[PAD]

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    def encode(self, words: Sequence[str]) -> list[int]:
        missing = [w for w in words if w not in self.index]
        if missing:
            raise ContractError(f"out-of-vocabulary words: {missing}")
        return [self.index[w] for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        """Words for ``ids`` with specials dropped and EOS ending the sentence."""
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if tok == EOS:
                break
            if tok not in SPECIALS:
                out.append(tok)
        return out

    def text(self, ids: Sequence[int]) -> str:
        return " ".join(self.decode(ids))

    def nouns_in(self, ids: Sequence[int]) -> list[str]:
        return [w for w in self.decode(ids) if w in self.nouns]

    def save(self, path):
        lines = []
        for t in self.tokens:
            link = str(self.links[t]) if t in self.links else ""
            lines.append(f"{t}\t{int(t in self.nouns)}\t{link}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        p = Path(path)
        if not p.exists():
            raise DependencyError(f"vocabulary file not found: {p}")
        tokens, nouns, links = [], set(), {}
        for n, ln in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            if not ln:
                continue
            parts = ln.split("\t")
            if len(parts) != 3 or parts[1] not in ("0", "1"):
                raise ContractError(f"vocabulary line {n}: expected token<TAB>noun flag<TAB>category")
            tokens.append(parts[0])
            if parts[1] == "1":
                nouns.add(parts[0])
            if parts[2]:
                links[parts[0]] = int(parts[2])
        return cls(tokens, nouns, links)


def default_vocabulary() -> Vocabulary:
    tokens = list(SPECIALS) + list(FUNCTION_WORDS) + list(EXTRA_NOUNS) + list(CATEGORIES)
    nouns = set(EXTRA_NOUNS) | set(CATEGORIES)
    return Vocabulary(tokens, nouns, {c: i for i, c in enumerate(CATEGORIES)})
