"""Speaker policies: decide at each step whether the captioner should fire."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ContractError


class SpeakerKind(str, enum.Enum):
    OBJECT = "object"
    DEPTH = "depth"
    CURIOSITY = "curiosity"


# Threshold grid for each policy, lowest (most talkative) first.
THRESHOLD_GRID = {
    SpeakerKind.OBJECT: (1, 3, 5),
    SpeakerKind.DEPTH: (0.25, 0.5, 0.75),
    SpeakerKind.CURIOSITY: (0.7, 0.85, 1.0),
}


@dataclass(frozen=True)
class SpeakerPolicy:
    kind: SpeakerKind
    threshold: float
    window: int = 20
    min_area: float = 0.01
    refractory: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SpeakerKind(self.kind))
        if self.window < 1:
            raise ContractError("speaker.window must be >= 1")
        if self.refractory < 0:
            raise ContractError("speaker.refractory must be >= 0")
        if not 0 <= self.min_area <= 1:
            raise ContractError("speaker.min_area must be in [0, 1]")

    def satisfied(self, value: float) -> bool:
        # "at least O objects" is inclusive; depth and surprisal must be above the threshold
        if self.kind is SpeakerKind.OBJECT:
            return value >= self.threshold
        return value > self.threshold


@dataclass
class SpeakerEvent:
    step: int
    kind: SpeakerKind
    threshold: float
    value: float
    snapshot: int | None = None
    caption: int | None = None


def trigger_value(policy: SpeakerPolicy, obs, reward_history: Sequence = ()) -> float:
    """The quantity compared against the threshold.

    ``obs`` needs ``visible`` (instance, category, area) triples and
    ``mean_depth``; ``reward_history`` holds reward records (``.raw``) or floats.
    """
    if policy.kind is SpeakerKind.OBJECT:
        return float(sum(1 for _, _, area in obs.visible if area >= policy.min_area))
    if policy.kind is SpeakerKind.DEPTH:
        return float(obs.mean_depth)
    if not reward_history:
        raise ContractError("curiosity speaker needs at least one reward record")
    tail = list(reward_history)[-policy.window:]
    return math.fsum(float(getattr(r, "raw", r)) for r in tail)


def should_speak(policy: SpeakerPolicy, obs, reward_history: Sequence = ()) -> tuple[bool, float]:
    value = trigger_value(policy, obs, reward_history)
    return policy.satisfied(value), value


def run_speaker(policy: SpeakerPolicy, observations: Sequence, rewards: Sequence) -> list[SpeakerEvent]:
    """Evaluate the policy along a trajectory.

    ``observations[t]`` is what the agent sees after step ``t`` and
    ``rewards[t]`` the reward record of that step.
    """
    if len(observations) != len(rewards):
        raise ContractError("observations and rewards must align step by step")
    events: list[SpeakerEvent] = []
    quiet_until = -1
    for t, obs in enumerate(observations):
        if t <= quiet_until:
            continue
        fire, value = should_speak(policy, obs, rewards[max(0, t + 1 - policy.window):t + 1])
        if fire:
            events.append(SpeakerEvent(t, policy.kind, policy.threshold, value))
            quiet_until = t + policy.refractory
    return events


def loquacity(events: Iterable[Sequence]) -> float:
    """Mean number of activations per episode."""
    counts = [len(e) for e in events]
    return sum(counts) / len(counts) if counts else 0.0


def audit(policy: SpeakerPolicy, events: Iterable[SpeakerEvent]) -> list[SpeakerEvent]:
    """Events whose stored value does not satisfy the policy (should be empty)."""
    return [e for e in events if not policy.satisfied(e.value)]
