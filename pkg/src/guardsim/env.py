"""The negotiation game as a resettable, steppable multi-agent environment.

Each episode the active agents exchange offer/demand bits through the
central service until either exactly one agent has offered to cover
everyone and everyone else demands that agent (success), or the step
cap is hit (failure).  The environment owns its RNG, ledger and
regulator state, so independent instances can run in parallel without
sharing anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EpisodeDoneError, MalformedActionError
from .ledger import EnergyModel, LedgerState, accrue_savings, report_consumption
from .regulator import (
    BlacklistConfig,
    RegulatorState,
    filter_actions,
    recommend,
    update_after_episode,
)
from .types import (
    AgentAction,
    EpisodeOutcome,
    JointAction,
    Mode,
    Observation,
    OutcomeKind,
    RewardSchedule,
    StepResult,
)


@dataclass(frozen=True)
class EnvConfig:
    """Static configuration of one environment instance.

    ``blacklist`` defaults to enabled in imposed mode and disabled
    otherwise; pass an explicit BlacklistConfig to override.
    ``recommendation_basis`` selects which ledger total the service
    ranks agents by ("consumed" reports or noiseless "saved" totals).
    """

    n_agents: int
    mode: Mode = Mode.FREE
    max_steps: int = 10
    rewards: RewardSchedule = field(default_factory=RewardSchedule)
    blacklist: Optional[BlacklistConfig] = None
    gamma_learning: float = 0.99
    seed: int = 0
    recommendation_basis: str = "consumed"

    def __post_init__(self) -> None:
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not (0.0 < self.gamma_learning <= 1.0):
            raise ValueError("gamma_learning must be in (0, 1]")
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.blacklist is None:
            object.__setattr__(
                self, "blacklist", BlacklistConfig(enabled=self.mode is Mode.IMPOSED)
            )
        if self.recommendation_basis not in ("consumed", "saved"):
            raise ValueError("recommendation_basis must be 'consumed' or 'saved'")


def check_agreement(
    joint_action: JointAction, active: Sequence[int]
) -> Optional[tuple[int, frozenset[int]]]:
    """Find the on-guard agent, if this step's actions settle one.

    Agent i wins iff i offers to every other active agent and every
    other active agent demands i.  Only current-step actions count;
    there are no standing offers.  If several agents qualify at once,
    the lowest id wins.
    """
    for i in sorted(active):
        action_i = joint_action[i]
        if all(action_i.offers[j] for j in active if j != i) and all(
            joint_action[j].demands[i] for j in active if j != i
        ):
            return i, frozenset(j for j in active if j != i)
    return None


class NegotiationEnv:
    """One negotiation environment instance.

    The ledger and regulator state persist across episodes: they are
    what couples successive negotiations (recommendation rotation,
    blacklisting).  Construct a fresh instance to start from scratch.
    """

    def __init__(
        self,
        config: EnvConfig,
        rng: Optional[np.random.Generator] = None,
        energy_model: Optional[EnergyModel] = None,
    ):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.energy_model = energy_model if energy_model is not None else EnergyModel()
        self.ledger = LedgerState(config.n_agents)
        self.regulator = RegulatorState.fresh(config.n_agents)
        self.episode_index = 0
        self._done = True
        self._active: list[int] = []
        self._excluded: list[int] = []
        self._recommended: Optional[int] = None
        self._step_count = 0
        self._last_actions: dict[int, AgentAction] = {}
        self._returns = [0.0] * config.n_agents
        self._demands_seen = False
        self._last_outcome: Optional[EpisodeOutcome] = None

    # -- queries ---------------------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def active_agents(self) -> list[int]:
        return list(self._active)

    @property
    def recommended(self) -> Optional[int]:
        return self._recommended

    @property
    def last_outcome(self) -> Optional[EpisodeOutcome]:
        return self._last_outcome

    @property
    def step_count(self) -> int:
        return self._step_count

    # -- lifecycle -------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> dict[int, Observation]:
        """Start a new episode and return every agent's first observation.

        With fewer than two active agents the episode degenerates: it is
        recorded immediately as a failure (everyone runs alone for the
        period, costing r_fail each) and ``done`` is already True.
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        n = self.config.n_agents
        self._active = self.regulator.active_agents()
        self._excluded = [i for i in range(n) if i not in self._active]
        self._step_count = 0
        self._last_actions = {}
        self._returns = [0.0] * n
        self._demands_seen = False
        self._recommended = None
        self._last_outcome = None
        self._done = False

        if len(self._active) < 2:
            outcome = EpisodeOutcome(
                kind=OutcomeKind.FAILURE,
                on_guard=None,
                served=frozenset(),
                steps_taken=0,
                per_agent_return_undiscounted=tuple(
                    self.config.rewards.r_fail for _ in range(n)
                ),
                degenerate=True,
            )
            observations = self._all_observations()
            self._finish_episode(outcome)
            return observations

        if self.config.mode is not Mode.FREE:
            self._recommended = recommend(
                self.ledger, self._active, self.config.recommendation_basis
            )
            self.regulator.last_recommendation = self._recommended
        return self._all_observations()

    def step(self, joint_action: JointAction) -> StepResult:
        """Advance one timestep; all validation happens before any state
        change, so a rejected call leaves the episode untouched."""
        if self._done:
            raise EpisodeDoneError("episode is done (or reset() was never called)")
        self._validate(joint_action)

        self._step_count += 1
        filtered, touched = filter_actions(self.config.mode, joint_action, self._recommended)
        self._last_actions = filtered
        if self._recommended is not None and any(
            filtered[j].demands[self._recommended]
            for j in self._active
            if j != self._recommended
        ):
            self._demands_seen = True

        rewards, outcome_kind, agreement = self._resolve_step(filtered)
        for agent_id, reward in rewards.items():
            self._returns[agent_id] += reward

        outcome = None
        if outcome_kind is not None:
            on_guard, served = agreement if agreement else (None, frozenset())
            outcome = EpisodeOutcome(
                kind=outcome_kind,
                on_guard=on_guard,
                served=served,
                steps_taken=self._step_count,
                per_agent_return_undiscounted=tuple(self._returns),
                degenerate=False,
            )

        # Observations reflect this episode's active set; bookkeeping
        # (blacklist decrements) applies only after they are built.
        observations = self._all_observations()
        if outcome is not None:
            self._finish_episode(outcome)

        info = {
            "step": self._step_count,
            "offers_filtered": touched,
            "recommended": self._recommended,
        }
        return StepResult(
            observations=observations,
            rewards=rewards,
            done=outcome is not None,
            outcome=outcome,
            info=info,
        )

    # -- internals -------------------------------------------------------

    def _validate(self, joint_action: JointAction) -> None:
        active = set(self._active)
        provided = set(joint_action)
        for agent_id in sorted(provided - active):
            if 0 <= agent_id < self.config.n_agents and not self.regulator.is_active(agent_id):
                raise MalformedActionError(f"agent {agent_id} is blacklisted and cannot act")
            raise MalformedActionError(f"unexpected action for agent {agent_id}")
        missing = active - provided
        if missing:
            raise MalformedActionError(f"missing actions for agents {sorted(missing)}")
        for agent_id, action in joint_action.items():
            action.validate(agent_id, self.config.n_agents)

    def _resolve_step(
        self, filtered: dict[int, AgentAction]
    ) -> tuple[dict[int, float], Optional[OutcomeKind], Optional[tuple[int, frozenset[int]]]]:
        rw = self.config.rewards
        agreement = check_agreement(filtered, self._active)
        rewards: dict[int, float] = {}
        if agreement is not None:
            on_guard, _ = agreement
            for i in self._active:
                rewards[i] = rw.r_on_guard if i == on_guard else rw.r_found
            for i in self._excluded:
                rewards[i] = rw.r_fail
            return rewards, OutcomeKind.SUCCESS, agreement
        if self._step_count >= self.config.max_steps:
            for i in self._active:
                rewards[i] = rw.r_fail
            for i in self._excluded:
                rewards[i] = rw.r_fail
            return rewards, OutcomeKind.FAILURE, None
        for i in self._active:
            rewards[i] = rw.r_step
        for i in self._excluded:
            rewards[i] = 0.0
        return rewards, None, None

    def _finish_episode(self, outcome: EpisodeOutcome) -> None:
        self._done = True
        self._last_outcome = outcome
        if outcome.kind is OutcomeKind.SUCCESS:
            report_consumption(self.ledger, outcome, self.energy_model, self.rng, self.episode_index)
            accrue_savings(self.ledger, outcome, self.energy_model)
        update_after_episode(
            self.regulator,
            outcome,
            self._recommended,
            self._demands_seen,
            self.config.blacklist,
        )
        self.episode_index += 1

    def encode_observation(self, agent_id: int) -> Observation:
        """Deterministic view of the last step's filtered actions plus
        the service's recommendation and blacklist bits."""
        n = self.config.n_agents
        if not 0 <= agent_id < n:
            raise ValueError(f"agent id out of range: {agent_id}")
        offers = [0] * n
        demands = [0] * n
        for j, action in self._last_actions.items():
            if j == agent_id:
                continue
            offers[j] = action.offers[agent_id]
            demands[j] = action.demands[agent_id]
        onehot = [0] * n
        if self._recommended is not None:
            onehot[self._recommended] = 1
        return Observation(
            offers_to_me=tuple(offers),
            demands_to_me=tuple(demands),
            i_am_recommended=int(self._recommended == agent_id),
            recommended_id_onehot=tuple(onehot),
            i_am_blacklisted=int(agent_id in self._excluded),
        )

    def _all_observations(self) -> dict[int, Observation]:
        return {i: self.encode_observation(i) for i in range(self.config.n_agents)}
