"""Oracle computation of the social-dilemma payoffs and the four
cooperation properties: efficiency, safety, incentive-compatibility
and the Jain fairness index.

All metric computations use undiscounted episode sums (gamma = 1);
the learning discount never enters here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import MetricUndefinedError
from .types import Mode, RewardSchedule


@dataclass(frozen=True)
class PayoffMatrix:
    """Two-cycle payoffs of the underlying dilemma.

    Built from the three per-period infra costs: o (off), a (active for
    own users only), g (on-guard for everyone).  Over two consecutive
    cycles: t = o+o (off both times, someone else guarded), r = g+o
    (one guard turn each), p = a+a (nobody cooperates, everyone stays
    active alone), s = g+g (guard both cycles for a partner that never
    reciprocates).
    """

    o: float
    a: float
    g: float
    t: float
    r: float
    p: float
    s: float

    @property
    def amplitude(self) -> float:
        """Span used to normalize the safety and incentive scores
        (temptation minus mutual-defection payoff: 2*(o - a))."""
        return self.t - self.p

    def is_prisoners_dilemma(self) -> bool:
        return self.t > self.r > self.p > self.s

    def is_boundary_case(self, tol: float = 1e-12) -> bool:
        """True when 2R = T + S, i.e. alternation pays exactly as much
        as mutual cooperation and neither is strictly favored."""
        return abs(2.0 * self.r - (self.t + self.s)) < tol


def payoff_matrix(o: float, a: float, g: float) -> PayoffMatrix:
    """Two-iteration payoff matrix from the per-period cost constants."""
    return PayoffMatrix(o=o, a=a, g=g, t=o + o, r=g + o, p=a + a, s=g + g)


def episode_return(rewards: Sequence[float], gamma: float = 1.0) -> float:
    """Discounted sum of a reward sequence."""
    total = 0.0
    factor = 1.0
    for reward in rewards:
        total += factor * reward
        factor *= gamma
    return total


@dataclass(frozen=True)
class Baselines:
    """Best-case and worst-case per-episode returns for one active set.

    The cooperative optimum is a one-step success: the on-guard agent
    pays r_on_guard and every served agent pays r_found.  The defective
    floor is a full-length failure.
    """

    n_active: int
    g_on_guard: float
    g_served: float
    g_defect: float
    sw_cooperate: float
    sw_defect: float


def baselines(n_active: int, rewards: RewardSchedule, max_steps: int) -> Baselines:
    if n_active < 2:
        raise MetricUndefinedError("baselines need at least two active agents")
    g_defect = rewards.r_step * (max_steps - 1) + rewards.r_fail
    sw_cooperate = rewards.r_on_guard + (n_active - 1) * rewards.r_found
    return Baselines(
        n_active=n_active,
        g_on_guard=rewards.r_on_guard,
        g_served=rewards.r_found,
        g_defect=g_defect,
        sw_cooperate=sw_cooperate,
        sw_defect=n_active * g_defect,
    )


def efficiency(per_agent_returns: Sequence[float], base: Baselines) -> float:
    """Normalized social welfare of one episode: 0 at the all-defect
    floor, 1 at the one-step cooperative optimum.

    ``per_agent_returns`` are the realized undiscounted returns of the
    episode's active agents only.
    """
    if len(per_agent_returns) != base.n_active:
        raise ValueError("returns must cover exactly the active agents")
    span = base.sw_cooperate - base.sw_defect
    if span == 0.0:
        raise MetricUndefinedError("efficiency undefined: cooperative and defective welfare coincide")
    return (sum(per_agent_returns) - base.sw_defect) / span


def safety(g_agent: float, g_defect: float, payoffs: PayoffMatrix) -> float:
    """Risk score of trying to cooperate against all-defectors.

    Both returns are measured with every other agent defecting; equal
    returns (no regret) give exactly 1.0.
    """
    span = payoffs.amplitude
    if span == 0.0:
        raise MetricUndefinedError("safety undefined: zero normalization span")
    return (g_agent - g_defect) / span + 1.0


def incentive_compatibility(g_agent: float, g_defect: float, payoffs: PayoffMatrix) -> float:
    """Gain from cooperating rather than defecting while everyone else
    keeps their (learned) policies, normalized like safety."""
    span = payoffs.amplitude
    if span == 0.0:
        raise MetricUndefinedError("incentive-compatibility undefined: zero normalization span")
    return (g_agent - g_defect) / span


def jain(savings: Sequence[float], active: Optional[Sequence[int]] = None) -> float:
    """Jain fairness index of cumulative savings over the active agents.

    Ranges over [1/n_active, 1]; equals 1 iff all active savings are
    equal and positive.  The all-zero vector has no information and is
    defined as the floor 1/n_active.
    """
    if active is None:
        values = list(savings)
    else:
        values = [savings[i] for i in active]
    if not values:
        raise MetricUndefinedError("jain needs at least one active agent")
    total = sum(values)
    square_sum = sum(v * v for v in values)
    if square_sum == 0.0:
        return 1.0 / len(values)
    return (total * total) / (len(values) * square_sum)


@dataclass
class EpisodeMetrics:
    """Per-episode metric row for one evaluation episode.

    ``safety_values`` and ``ic_values`` align with ``active`` (the
    episode's active agents in id order) and are empty for degenerate
    episodes, which carry no negotiation to score.
    """

    n_agents: int
    mode: Mode
    run: int
    episode: int
    active: tuple[int, ...]
    efficiency: float
    safety_values: tuple[float, ...]
    ic_values: tuple[float, ...]
    jain: float
    jain_degenerate: bool
    steps_taken: int
    success: bool
    on_guard: Optional[int]
    degenerate: bool = False

    @property
    def safety_mean(self) -> Optional[float]:
        if not self.safety_values:
            return None
        return sum(self.safety_values) / len(self.safety_values)

    @property
    def ic_mean(self) -> Optional[float]:
        if not self.ic_values:
            return None
        return sum(self.ic_values) / len(self.ic_values)


@dataclass(frozen=True)
class AggregateCell:
    """Mean and population standard deviation per (N, mode) cell.

    E and J aggregate per-episode values; Sf and IC pool per-agent
    values across episodes and runs.
    """

    n_agents: int
    mode: Mode
    episodes: int
    e_mean: float
    e_std: float
    sf_mean: float
    sf_std: float
    ic_mean: float
    ic_std: float
    j_mean: float
    j_std: float


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, var**0.5


def aggregate_cells(rows: Sequence[EpisodeMetrics]) -> list[AggregateCell]:
    """Collapse episode rows into one aggregate row per (N, mode)."""
    cells: dict[tuple[int, str], list[EpisodeMetrics]] = {}
    for row in rows:
        cells.setdefault((row.n_agents, row.mode.value), []).append(row)
    out = []
    for (n_agents, mode), group in sorted(cells.items()):
        e_mean, e_std = _mean_std([r.efficiency for r in group])
        sf_pool = [v for r in group for v in r.safety_values]
        ic_pool = [v for r in group for v in r.ic_values]
        sf_mean, sf_std = _mean_std(sf_pool)
        ic_mean, ic_std = _mean_std(ic_pool)
        j_mean, j_std = _mean_std([r.jain for r in group])
        out.append(
            AggregateCell(
                n_agents=n_agents,
                mode=Mode(mode),
                episodes=len(group),
                e_mean=e_mean,
                e_std=e_std,
                sf_mean=sf_mean,
                sf_std=sf_std,
                ic_mean=ic_mean,
                ic_std=ic_std,
                j_mean=j_mean,
                j_std=j_std,
            )
        )
    return out
