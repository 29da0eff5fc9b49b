"""Simulated distributed-ledger bookkeeping of on-guard energy.

The ledger receives one a-posteriori consumption report per successful
negotiation (noisy, as if metered) and tracks noiseless per-agent
savings, which feed the fairness index and the recommendation policy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import EpisodeOutcome, OutcomeKind


@dataclass(frozen=True)
class EnergyModel:
    """Nominal per-period energy magnitudes in kWh.

    base_on_guard_kwh: consumption of the on-guard infrastructure.
    active_alone_kwh:  consumption of infrastructure kept on for its
                       own users only.
    off_kwh:           residual consumption when switched off.
    noise_fraction:    relative metering noise on consumption reports.
    """

    base_on_guard_kwh: float = 1.00
    active_alone_kwh: float = 0.90
    off_kwh: float = 0.01
    noise_fraction: float = 0.10

    def __post_init__(self) -> None:
        if not (0.0 <= self.noise_fraction < 1.0):
            raise ValueError("noise_fraction must be in [0, 1)")
        if not (self.base_on_guard_kwh >= self.active_alone_kwh >= self.off_kwh >= 0.0):
            raise ValueError("energy magnitudes must satisfy base >= active_alone >= off >= 0")

    @property
    def savings_per_served_kwh(self) -> float:
        """kWh a served agent saves by switching off for one period."""
        return self.active_alone_kwh - self.off_kwh


@dataclass(frozen=True)
class LedgerEntry:
    episode: int
    on_guard: int
    reported_kwh: float


class LedgerState:
    """Cumulative per-agent energy totals plus the append-only entry log.

    ``consumed_on_guard`` folds the noisy reports; ``saved`` folds the
    noiseless savings of served agents.  Totals are reproducible from
    the logs by construction.
    """

    def __init__(self, n_agents: int):
        self.n_agents = n_agents
        self.consumed_on_guard = [0.0] * n_agents
        self.saved = [0.0] * n_agents
        self.entries: list[LedgerEntry] = []

    def copy(self) -> "LedgerState":
        dup = LedgerState(self.n_agents)
        dup.consumed_on_guard = list(self.consumed_on_guard)
        dup.saved = list(self.saved)
        dup.entries = list(self.entries)
        return dup

    def totals(self, basis: str = "consumed") -> tuple[float, ...]:
        if basis == "consumed":
            return tuple(self.consumed_on_guard)
        if basis == "saved":
            return tuple(self.saved)
        raise ValueError(f"unknown ledger basis: {basis!r}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "on_guard", "reported_kwh"])
            for entry in self.entries:
                writer.writerow([entry.episode, entry.on_guard, repr(entry.reported_kwh)])


def report_consumption(
    ledger: LedgerState,
    outcome: EpisodeOutcome,
    model: EnergyModel,
    rng: np.random.Generator,
    episode: int,
) -> LedgerState:
    """Record the on-guard consumption report for a successful episode.

    The reported value is base * (1 + u) with u uniform on
    [-noise_fraction, +noise_fraction].  Failed episodes produce no
    report: nobody was on-guard.
    """
    if outcome.kind is not OutcomeKind.SUCCESS:
        return ledger
    u = rng.uniform(-model.noise_fraction, model.noise_fraction)
    reported = model.base_on_guard_kwh * (1.0 + u)
    ledger.entries.append(LedgerEntry(episode=episode, on_guard=outcome.on_guard, reported_kwh=reported))
    ledger.consumed_on_guard[outcome.on_guard] += reported
    return ledger


def accrue_savings(ledger: LedgerState, outcome: EpisodeOutcome, model: EnergyModel) -> LedgerState:
    """Credit each served agent with one period of switched-off savings."""
    if outcome.kind is OutcomeKind.SUCCESS:
        for agent in outcome.served:
            ledger.saved[agent] += model.savings_per_served_kwh
    return ledger


def fold_consumed(entries: Sequence[LedgerEntry], n_agents: int) -> list[float]:
    """Recompute consumption totals from the entry log (audit helper)."""
    totals = [0.0] * n_agents
    for entry in entries:
        totals[entry.on_guard] += entry.reported_kwh
    return totals
