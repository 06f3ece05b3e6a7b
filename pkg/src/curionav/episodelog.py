"""Tab-separated episode log: one tagged record per line.

    EPISODE  world_seed  x  y  heading  length  policy  threshold
    STEP     t  action  raw  penalty  net  x  y  heading  mean_depth  objects
    SPEAK    t  kind  threshold  value
    CAPTION  t  token ids  text  logprob
    SUMMARY  key=value ...

``objects`` lists ``instance:category:area`` triples joined by ``;`` (``-``
when nothing is visible). Floats are written with ``repr`` so replay is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ContractError
from .world import AgentPose


@dataclass
class StepRecord:
    t: int
    action: int
    raw: float
    penalty: float
    net: float
    pose: AgentPose
    mean_depth: float
    visible: list[tuple[int, int, float]]


@dataclass
class SpeakRecord:
    t: int
    kind: str
    threshold: float
    value: float


@dataclass
class CaptionRecord:
    t: int
    tokens: list[int]
    text: str
    logprob: float


@dataclass
class EpisodeLog:
    world_seed: int
    start: AgentPose
    length: int
    policy: str = "-"
    threshold: float = 0.0
    steps: list[StepRecord] = field(default_factory=list)
    speaks: list[SpeakRecord] = field(default_factory=list)
    captions: list[CaptionRecord] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict)

    @property
    def poses(self) -> list[AgentPose]:
        return [self.start] + [s.pose for s in self.steps]

    def validate(self):
        ts = [s.t for s in self.steps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ContractError("STEP indices must be strictly increasing")
        spoken = {s.t for s in self.speaks}
        for c in self.captions:
            if c.t not in spoken:
                raise ContractError(f"CAPTION at step {c.t} has no SPEAK record")


def _f(x: float) -> str:
    return repr(float(x))


def _objects(visible: Iterable[tuple[int, int, float]]) -> str:
    parts = [f"{i}:{c}:{_f(a)}" for i, c, a in visible]
    return ";".join(parts) if parts else "-"


def _parse_objects(text: str) -> list[tuple[int, int, float]]:
    if text == "-":
        return []
    out = []
    for part in text.split(";"):
        i, c, a = part.split(":")
        out.append((int(i), int(c), float(a)))
    return out


def format_log(log: EpisodeLog) -> str:
    log.validate()
    p = log.start
    lines = [f"EPISODE\t{log.world_seed}\t{_f(p.x)}\t{_f(p.y)}\t{_f(p.heading)}\t{log.length}"
             f"\t{log.policy}\t{_f(log.threshold)}"]
    speaks = {}
    for s in log.speaks:
        speaks.setdefault(s.t, []).append(s)
    captions = {}
    for c in log.captions:
        captions.setdefault(c.t, []).append(c)
    for s in log.steps:
        q = s.pose
        lines.append("\t".join(["STEP", str(s.t), str(s.action), _f(s.raw), _f(s.penalty), _f(s.net),
                                _f(q.x), _f(q.y), _f(q.heading), _f(s.mean_depth), _objects(s.visible)]))
        for sp in speaks.get(s.t, ()):
            lines.append(f"SPEAK\t{sp.t}\t{sp.kind}\t{_f(sp.threshold)}\t{_f(sp.value)}")
        for c in captions.get(s.t, ()):
            ids = ",".join(str(i) for i in c.tokens)
            lines.append(f"CAPTION\t{c.t}\t{ids}\t{c.text}\t{_f(c.logprob)}")
    if log.summary:
        lines.append("SUMMARY\t" + "\t".join(f"{k}={_f(v)}" for k, v in log.summary.items()))
    return "\n".join(lines) + "\n"


def parse_log(text: str) -> EpisodeLog:
    log = None
    for n, ln in enumerate(text.splitlines(), 1):
        if not ln:
            continue
        f = ln.split("\t")
        try:
            tag = f[0]
            if tag == "EPISODE":
                log = EpisodeLog(int(f[1]), AgentPose(float(f[2]), float(f[3]), float(f[4])), int(f[5]),
                                 f[6], float(f[7]))
                continue
            if log is None:
                raise ContractError("log must start with an EPISODE record")
            if tag == "STEP":
                log.steps.append(StepRecord(int(f[1]), int(f[2]), float(f[3]), float(f[4]), float(f[5]),
                                            AgentPose(float(f[6]), float(f[7]), float(f[8])), float(f[9]),
                                            _parse_objects(f[10])))
            elif tag == "SPEAK":
                log.speaks.append(SpeakRecord(int(f[1]), f[2], float(f[3]), float(f[4])))
            elif tag == "CAPTION":
                ids = [int(i) for i in f[2].split(",")] if f[2] else []
                log.captions.append(CaptionRecord(int(f[1]), ids, f[3], float(f[4])))
            elif tag == "SUMMARY":
                log.summary = {k: float(v) for k, v in (kv.split("=", 1) for kv in f[1:])}
            else:
                raise ContractError(f"unknown record tag {tag!r}")
        except ContractError:
            raise
        except (IndexError, ValueError) as exc:
            raise ContractError(f"log line {n}: malformed {f[0]} record") from exc
    if log is None:
        raise ContractError("empty episode log")
    log.validate()
    return log


def write_log(path, log: EpisodeLog):
    Path(path).write_text(format_log(log), encoding="utf-8")


def read_log(path) -> EpisodeLog:
    return parse_log(Path(path).read_text(encoding="utf-8"))
