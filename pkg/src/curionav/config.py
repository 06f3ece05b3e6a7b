"""Run configuration: TOML sections mirroring each component's settings."""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import tomlkit
from tomlkit.exceptions import ParseError

from .agent import PpoConfig
from .captioner.model import CaptionConfig
from .curiosity import CuriosityConfig
from .errors import ConfigMissingError, ConfigSyntaxError, ConfigValueError, ContractError
from .perception import PerceptionConfig
from .speaker import SpeakerKind, SpeakerPolicy
from .world import WorldConfig


@dataclass(frozen=True)
class SpeakerConfig:
    kind: str = "curiosity"
    threshold: float = 0.85
    window: int = 20
    min_area: float = 0.01
    refractory: int = 0

    def validate(self):
        try:
            SpeakerKind(self.kind)
        except ValueError:
            raise ContractError(f"speaker.kind must be one of {[k.value for k in SpeakerKind]}, got {self.kind!r}")
        self.policy()

    def policy(self) -> SpeakerPolicy:
        return SpeakerPolicy(SpeakerKind(self.kind), self.threshold, self.window, self.min_area, self.refractory)


@dataclass(frozen=True)
class MetricsConfig:
    similarity_seed: int = 0
    similarity_dim: int = 16
    vectors: str = ""          # optional word-vector file; empty = seeded vectors
    window: int = 20

    def validate(self):
        if self.similarity_dim < 1 or self.window < 1:
            raise ContractError("metrics.similarity_dim and metrics.window must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train_worlds: tuple[int, ...] = tuple(range(10))
    test_worlds: tuple[int, ...] = (100, 101, 102, 103, 104)
    episodes: int = 5
    world: WorldConfig = WorldConfig()
    perception: PerceptionConfig = PerceptionConfig()
    curiosity: CuriosityConfig = CuriosityConfig()
    ppo: PpoConfig = PpoConfig()
    speaker: SpeakerConfig = SpeakerConfig()
    captioner: CaptionConfig = CaptionConfig()
    metrics: MetricsConfig = MetricsConfig()

    def validate(self):
        if not self.train_worlds or not self.test_worlds:
            raise ContractError("train_worlds and test_worlds must be non-empty")
        if self.episodes < 1:
            raise ContractError("episodes must be >= 1")
        for name in SECTIONS:
            getattr(self, name).validate()


SECTIONS = ("world", "perception", "curiosity", "ppo", "speaker", "captioner", "metrics")
TOP_LEVEL = ("seed", "train_worlds", "test_worlds", "episodes")


def _line_of(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header when key is None)."""
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        ln = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", ln)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", ln):
            return n
    return None


def _coerce(value, target, where: str, line):
    """Convert a TOML value to the type of the default ``target``."""
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigValueError(f"{where} must be a boolean", line)
        return bool(value)
    if isinstance(target, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValueError(f"{where} must be an integer", line)
        return int(value)
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValueError(f"{where} must be a number", line)
        return float(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigValueError(f"{where} must be a string", line)
        return str(value)
    if isinstance(target, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigValueError(f"{where} must be a list of integers", line)
        return tuple(int(v) for v in value)
    raise ConfigValueError(f"{where} has an unsupported type", line)


def parse_config_text(text: str) -> RunConfig:
    try:
        doc = tomlkit.parse(text).unwrap()
    except ParseError as exc:
        raise ConfigSyntaxError(f"malformed TOML: {exc}", getattr(exc, "line", None)) from exc
    base = RunConfig()
    top = {}
    sections = {}
    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigValueError(f"{key} must be a table", _line_of(text, None, key))
            sub = getattr(base, key)
            known = {f.name: getattr(sub, f.name) for f in fields(sub)}
            kw = {}
            for k, v in value.items():
                line = _line_of(text, key, k)
                if k not in known:
                    raise ConfigValueError(f"unknown key {key}.{k}", line)
                kw[k] = _coerce(v, known[k], f"{key}.{k}", line)
            sections[key] = replace(sub, **kw)
        elif key in TOP_LEVEL:
            line = _line_of(text, None, key)
            top[key] = _coerce(value, getattr(base, key), key, line)
        else:
            raise ConfigValueError(f"unknown key or section {key!r}", _line_of(text, None, key) or _line_of(text, key, None))
    cfg = replace(base, **top, **sections)
    try:
        cfg.validate()
    except ContractError as exc:
        msg = str(exc)
        m = re.match(r"^(\w+)\.(\w+)", msg)
        line = _line_of(text, m.group(1), m.group(2)) if m else None
        if line is None and m is None:
            m2 = re.match(r"^(\w+)", msg)
            line = _line_of(text, None, m2.group(1)) if m2 else None
        raise ConfigValueError(msg, line) from exc
    return cfg


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigMissingError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def dump_config(cfg: RunConfig) -> str:
    doc = tomlkit.document()
    for key in TOP_LEVEL:
        doc.add(key, _plain(getattr(cfg, key)))
    for name in SECTIONS:
        table = tomlkit.table()
        sub = getattr(cfg, name)
        for f in fields(sub):
            table.add(f.name, _plain(getattr(sub, f.name)))
        doc.add(name, table)
    return tomlkit.dumps(doc)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Return ``cfg`` with per-section field overrides, e.g. ``speaker={"threshold": 1.0}``."""
    out = cfg
    for name, values in sections.items():
        out = replace(out, **{name: dataclasses.replace(getattr(out, name), **values)})
    out.validate()
    return out
