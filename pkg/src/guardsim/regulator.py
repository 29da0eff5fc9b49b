"""The central service's three intervention levers.

Recommendation picks the agent that has consumed the least on-guard
energy so far (ties to the lowest id).  Imposed-mode filtering clears
offer bits of everyone except the recommended agent.  Blacklisting
temporarily excludes an agent that keeps refusing on-guard duty and
reintegrates it once the exclusion period has elapsed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import DegenerateEpisodeError
from .ledger import LedgerState
from .types import AgentAction, EpisodeOutcome, JointAction, Mode, OutcomeKind


@dataclass(frozen=True)
class BlacklistConfig:
    """Provocability/forgiveness knobs.

    An agent that refuses ``refusal_threshold`` times is excluded for
    ``duration`` completed episodes.  Only the imposed mode enables it.
    """

    refusal_threshold: int = 3
    duration: int = 5
    enabled: bool = False

    def __post_init__(self) -> None:
        if self.refusal_threshold < 1:
            raise ValueError("refusal_threshold must be >= 1")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")


@dataclass
class RegulatorState:
    """Mutable bookkeeping the service keeps between episodes."""

    refusal_count: list[int]
    blacklist_remaining: list[int]
    last_recommendation: Optional[int] = None

    @classmethod
    def fresh(cls, n_agents: int) -> "RegulatorState":
        return cls(refusal_count=[0] * n_agents, blacklist_remaining=[0] * n_agents)

    def copy(self) -> "RegulatorState":
        return RegulatorState(
            refusal_count=list(self.refusal_count),
            blacklist_remaining=list(self.blacklist_remaining),
            last_recommendation=self.last_recommendation,
        )

    def is_active(self, agent_id: int) -> bool:
        return self.blacklist_remaining[agent_id] == 0

    def active_agents(self) -> list[int]:
        return [i for i, rem in enumerate(self.blacklist_remaining) if rem == 0]


def recommend(ledger: LedgerState, active: Iterable[int], basis: str = "consumed") -> int:
    """Pick the next on-guard candidate: the active agent with the
    lowest cumulative ledger total, ties broken by lowest id."""
    candidates = sorted(active)
    if len(candidates) < 2:
        raise DegenerateEpisodeError("recommendation needs at least two active agents")
    totals = ledger.totals(basis)
    return min(candidates, key=lambda i: (totals[i], i))


def filter_actions(
    mode: Mode,
    joint_action: JointAction,
    recommended: Optional[int],
) -> tuple[dict[int, AgentAction], tuple[int, ...]]:
    """Apply the service's action filter for the given mode.

    Free and recommended modes relay actions untouched.  Imposed mode
    clears the offer bits of every non-recommended agent; demands pass
    through, and the recommended agent keeps full freedom (it is never
    forced to offer).  Returns the filtered joint action and the ids
    whose offers were actually modified.
    """
    if mode is not Mode.IMPOSED:
        return dict(joint_action), ()
    if recommended is None:
        raise ValueError("imposed mode requires a recommendation")
    filtered: dict[int, AgentAction] = {}
    touched: list[int] = []
    for agent_id, action in joint_action.items():
        if agent_id == recommended or not any(action.offers):
            filtered[agent_id] = action
        else:
            filtered[agent_id] = AgentAction(offers=(0,) * len(action.offers), demands=action.demands)
            touched.append(agent_id)
    return filtered, tuple(sorted(touched))


def update_after_episode(
    state: RegulatorState,
    outcome: EpisodeOutcome,
    recommended: Optional[int],
    demands_seen: bool,
    config: BlacklistConfig,
) -> RegulatorState:
    """End-of-episode bookkeeping: serve out blacklist time, then judge
    the recommended agent.

    Existing exclusions are decremented first so a freshly triggered
    blacklist lasts its full duration.  A refusal is recorded only when
    the episode failed while at least one other agent demanded the
    recommended agent; a successful on-guard episode forgives past
    refusals.
    """
    for i, remaining in enumerate(state.blacklist_remaining):
        if remaining > 0:
            state.blacklist_remaining[i] = remaining - 1
            if state.blacklist_remaining[i] == 0:
                state.refusal_count[i] = 0
    if not config.enabled or recommended is None:
        return state
    if outcome.kind is OutcomeKind.SUCCESS:
        state.refusal_count[recommended] = 0
    elif demands_seen and not outcome.degenerate:
        state.refusal_count[recommended] += 1
        if state.refusal_count[recommended] >= config.refusal_threshold:
            state.blacklist_remaining[recommended] = config.duration
            state.refusal_count[recommended] = 0
    return state
