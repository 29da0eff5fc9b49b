"""Ledger reporting, savings accrual, and noise bounds."""

import numpy as np
import pytest

from guardsim import (
    AgentAction,
    EnergyModel,
    EnvConfig,
    EpisodeOutcome,
    LedgerState,
    Mode,
    NegotiationEnv,
    OutcomeKind,
    accrue_savings,
    report_consumption,
)
from guardsim.ledger import fold_consumed


class FixedRng:
    """Stands in for a numpy Generator with a pinned uniform draw."""

    def __init__(self, value):
        self.value = value

    def uniform(self, low, high):
        assert low <= self.value <= high
        return self.value


def success_outcome(on_guard=0, served=(1, 2)):
    return EpisodeOutcome(
        kind=OutcomeKind.SUCCESS,
        on_guard=on_guard,
        served=frozenset(served),
        steps_taken=1,
        per_agent_return_undiscounted=(0.0, 0.0, 0.0),
    )


def failure_outcome():
    return EpisodeOutcome(
        kind=OutcomeKind.FAILURE,
        on_guard=None,
        served=frozenset(),
        steps_taken=10,
        per_agent_return_undiscounted=(0.0, 0.0, 0.0),
    )


class TestReportConsumption:
    def test_fixed_draw_gives_expected_report(self):
        ledger = LedgerState(3)
        report_consumption(ledger, success_outcome(), EnergyModel(), FixedRng(0.07), episode=0)
        assert ledger.entries[0].reported_kwh == pytest.approx(1.07)
        assert ledger.consumed_on_guard == pytest.approx([1.07, 0.0, 0.0])

    def test_zero_noise_reports_base_exactly(self):
        ledger = LedgerState(3)
        model = EnergyModel(noise_fraction=0.0)
        report_consumption(ledger, success_outcome(), model, np.random.default_rng(0), episode=0)
        assert ledger.entries[0].reported_kwh == 1.0

    def test_failure_produces_no_entry(self):
        ledger = LedgerState(3)
        report_consumption(ledger, failure_outcome(), EnergyModel(), np.random.default_rng(0), episode=0)
        assert ledger.entries == []
        assert ledger.consumed_on_guard == [0.0, 0.0, 0.0]

    def test_monte_carlo_bounds_and_mean(self):
        ledger = LedgerState(2)
        model = EnergyModel()
        rng = np.random.default_rng(1234)
        outcome = EpisodeOutcome(
            kind=OutcomeKind.SUCCESS,
            on_guard=0,
            served=frozenset({1}),
            steps_taken=1,
            per_agent_return_undiscounted=(0.0, 0.0),
        )
        for episode in range(10_000):
            report_consumption(ledger, outcome, model, rng, episode)
        values = [e.reported_kwh for e in ledger.entries]
        assert min(values) >= 0.90 and max(values) <= 1.10
        assert 0.99 <= sum(values) / len(values) <= 1.01


class TestAccrueSavings:
    def test_served_agents_save_nominal_delta(self):
        ledger = LedgerState(3)
        accrue_savings(ledger, success_outcome(on_guard=0, served=(1, 2)), EnergyModel())
        assert ledger.saved == pytest.approx([0.0, 0.89, 0.89])

    def test_failure_accrues_nothing(self):
        ledger = LedgerState(3)
        accrue_savings(ledger, failure_outcome(), EnergyModel())
        assert ledger.saved == [0.0, 0.0, 0.0]

    def test_two_successes_accumulate(self):
        ledger = LedgerState(3)
        model = EnergyModel()
        accrue_savings(ledger, success_outcome(on_guard=0, served=(1, 2)), model)
        accrue_savings(ledger, success_outcome(on_guard=1, served=(0, 2)), model)
        assert ledger.saved == pytest.approx([0.89, 0.89, 1.78])


class TestLedgerInvariants:
    def test_totals_reproducible_from_entry_log(self):
        env = NegotiationEnv(EnvConfig(n_agents=3, mode=Mode.IMPOSED, seed=21))
        for _ in range(25):
            env.reset()
            designated = env.recommended
            acts = {}
            for i in env.active_agents:
                if i == designated:
                    acts[i] = AgentAction.make(3, offers=[j for j in range(3) if j != i])
                else:
                    acts[i] = AgentAction.make(3, demands=[designated])
            while not env.done:
                env.step(acts)
        folded = fold_consumed(env.ledger.entries, 3)
        assert folded == pytest.approx(env.ledger.consumed_on_guard)
        assert len(env.ledger.entries) == 25

    def test_only_on_guard_consumes_only_served_save(self):
        ledger = LedgerState(3)
        model = EnergyModel()
        rng = np.random.default_rng(5)
        before_saved = list(ledger.saved)
        report_consumption(ledger, success_outcome(on_guard=1, served=(0, 2)), model, rng, 0)
        accrue_savings(ledger, success_outcome(on_guard=1, served=(0, 2)), model)
        assert ledger.consumed_on_guard[0] == 0.0 and ledger.consumed_on_guard[2] == 0.0
        assert ledger.consumed_on_guard[1] > 0.0
        assert ledger.saved[1] == before_saved[1]
        assert ledger.saved[0] == ledger.saved[2] == pytest.approx(0.89)

    def test_csv_export(self, tmp_path):
        ledger = LedgerState(3)
        report_consumption(ledger, success_outcome(), EnergyModel(), FixedRng(0.0), episode=4)
        path = tmp_path / "ledger.csv"
        ledger.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "episode,on_guard,reported_kwh"
        assert lines[1] == "4,0,1.0"

    def test_energy_model_validation(self):
        with pytest.raises(ValueError):
            EnergyModel(noise_fraction=1.0)
        with pytest.raises(ValueError):
            EnergyModel(base_on_guard_kwh=0.5, active_alone_kwh=0.9)
