"""Domain types for the on-guard negotiation game.

One episode is one negotiation over which single provider keeps its
infrastructure on for the next low-activity period.  Agents act by
setting offer bits ("I will be on-guard for j") and demand bits
("j should be on-guard for me").  All bit-vectors have length N with
self-bits forced to zero, so every agent indexes uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import MalformedActionError


class Mode(str, Enum):
    """Degree of intervention of the central on-guard service."""

    FREE = "F"
    RECOMMENDED = "R"
    IMPOSED = "I"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().upper()
        aliases = {
            "F": cls.FREE, "FREE": cls.FREE,
            "R": cls.RECOMMENDED, "RECOMMENDED": cls.RECOMMENDED,
            "I": cls.IMPOSED, "IMPOSED": cls.IMPOSED,
        }
        if key not in aliases:
            raise ValueError(f"unknown mode: {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class RewardSchedule:
    """Per-episode reward constants, all non-positive (kWh-scale costs).

    r_on_guard: awarded to the agent that ends up on-guard.
    r_found:    awarded to every other agent of a successful negotiation.
    r_fail:     awarded to every active agent when negotiation fails,
                and to excluded (blacklisted) agents each episode they
                sit out running their infrastructure alone.
    r_step:     per-timestep nudge to keep negotiations short.
    """

    r_on_guard: float = -1.00
    r_found: float = -0.01
    r_fail: float = -0.90
    r_step: float = -0.01

    def __post_init__(self) -> None:
        if not (self.r_on_guard <= self.r_fail <= self.r_found <= 0.0):
            raise ValueError("rewards must satisfy r_on_guard <= r_fail <= r_found <= 0")
        if self.r_step > 0.0:
            raise ValueError("r_step must be <= 0")


def _as_bits(n: int, values: Iterable[int]) -> tuple[int, ...]:
    bits = tuple(int(v) for v in values)
    if len(bits) != n or any(b not in (0, 1) for b in bits):
        raise MalformedActionError(f"expected {n} bits in {{0,1}}, got {values!r}")
    return bits


@dataclass(frozen=True)
class AgentAction:
    """One agent's sub-actions for a single timestep.

    offers[j] = 1 means "I offer to be on-guard for agent j";
    demands[j] = 1 means "I demand agent j be on-guard for me".
    """

    offers: tuple[int, ...]
    demands: tuple[int, ...]

    @classmethod
    def zero(cls, n_agents: int) -> "AgentAction":
        return cls(offers=(0,) * n_agents, demands=(0,) * n_agents)

    @classmethod
    def make(cls, n_agents: int, offers: Iterable[int] = (), demands: Iterable[int] = ()) -> "AgentAction":
        """Build an action from sets/iterables of target agent ids."""
        off = [0] * n_agents
        dem = [0] * n_agents
        for j in offers:
            off[j] = 1
        for j in demands:
            dem[j] = 1
        return cls(offers=tuple(off), demands=tuple(dem))

    @classmethod
    def from_bits(cls, n_agents: int, offers: Iterable[int], demands: Iterable[int]) -> "AgentAction":
        return cls(offers=_as_bits(n_agents, offers), demands=_as_bits(n_agents, demands))

    def validate(self, agent_id: int, n_agents: int) -> None:
        """Reject malformed actions before they touch the environment."""
        if len(self.offers) != n_agents or len(self.demands) != n_agents:
            raise MalformedActionError(
                f"agent {agent_id}: action vectors must have length {n_agents}"
            )
        for vec in (self.offers, self.demands):
            if any(b not in (0, 1) for b in vec):
                raise MalformedActionError(f"agent {agent_id}: bits must be 0 or 1")
        if self.offers[agent_id] or self.demands[agent_id]:
            raise MalformedActionError(f"agent {agent_id}: self-bit set")

    def to_vector(self) -> np.ndarray:
        """Flat binary vector: offers followed by demands (length 2N)."""
        return np.asarray(self.offers + self.demands, dtype=np.float64)


JointAction = Mapping[int, AgentAction]


@dataclass(frozen=True)
class Observation:
    """What one agent sees at the start of a timestep.

    Vector layout (documented for flat consumers, length 3N+2):
    offers_to_me ++ demands_to_me ++ recommended_id_onehot
    ++ [i_am_recommended] ++ [i_am_blacklisted].
    """

    offers_to_me: tuple[int, ...]
    demands_to_me: tuple[int, ...]
    i_am_recommended: int
    recommended_id_onehot: tuple[int, ...]
    i_am_blacklisted: int

    def to_vector(self) -> np.ndarray:
        parts = (
            self.offers_to_me
            + self.demands_to_me
            + self.recommended_id_onehot
            + (self.i_am_recommended, self.i_am_blacklisted)
        )
        return np.asarray(parts, dtype=np.float64)

    @staticmethod
    def vector_length(n_agents: int) -> int:
        return 3 * n_agents + 2


class OutcomeKind(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class EpisodeOutcome:
    """Result of one completed negotiation.

    ``degenerate`` marks episodes that auto-failed at reset because
    fewer than two agents were active; those have steps_taken == 0.
    """

    kind: OutcomeKind
    on_guard: Optional[int]
    served: frozenset[int]
    steps_taken: int
    per_agent_return_undiscounted: tuple[float, ...]
    degenerate: bool = False

    @property
    def success(self) -> bool:
        return self.kind is OutcomeKind.SUCCESS


@dataclass
class StepResult:
    """Environment response to one joint action."""

    observations: dict[int, Observation]
    rewards: dict[int, float]
    done: bool
    outcome: Optional[EpisodeOutcome]
    info: dict = field(default_factory=dict)
