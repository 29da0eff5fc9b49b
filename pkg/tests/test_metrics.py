"""Payoff matrix, baselines and the four cooperation properties."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guardsim import (
    MetricUndefinedError,
    Mode,
    RewardSchedule,
    aggregate_cells,
    baselines,
    efficiency,
    episode_return,
    incentive_compatibility,
    jain,
    payoff_matrix,
    safety,
)
from guardsim.metrics import EpisodeMetrics


DEFAULTS = payoff_matrix(o=-0.01, a=-0.90, g=-1.00)


class TestPayoffMatrix:
    def test_default_constants(self):
        assert DEFAULTS.t == pytest.approx(-0.02, abs=1e-12)
        assert DEFAULTS.r == pytest.approx(-1.01, abs=1e-12)
        assert DEFAULTS.p == pytest.approx(-1.80, abs=1e-12)
        assert DEFAULTS.s == pytest.approx(-2.00, abs=1e-12)

    def test_prisoners_dilemma_ordering(self):
        assert DEFAULTS.is_prisoners_dilemma()
        assert DEFAULTS.t > DEFAULTS.r > DEFAULTS.p > DEFAULTS.s

    def test_boundary_identity(self):
        assert DEFAULTS.is_boundary_case()
        assert 2 * DEFAULTS.r == pytest.approx(DEFAULTS.t + DEFAULTS.s, abs=1e-12)

    def test_normalization_amplitude(self):
        assert DEFAULTS.amplitude == pytest.approx(1.78, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        st.floats(-10, 0),
        st.floats(-10, 0),
        st.floats(-10, 0),
    )
    def test_construction_identities_always_hold(self, o, a, g):
        pm = payoff_matrix(o, a, g)
        assert pm.t == o + o
        assert pm.r == g + o
        assert pm.p == a + a
        assert pm.s == g + g


class TestEpisodeReturn:
    def test_single_reward(self):
        assert episode_return([-1.00], 1.0) == -1.00

    def test_default_failure_arithmetic(self):
        rewards = [-0.01] * 9 + [-0.9]
        assert episode_return(rewards, 1.0) == pytest.approx(-0.99)

    def test_discounted(self):
        assert episode_return([-0.01, -0.01], 0.5) == pytest.approx(-0.015)


class TestBaselines:
    def test_three_agents_defaults(self):
        base = baselines(3, RewardSchedule(), 10)
        assert base.sw_cooperate == pytest.approx(-1.02)
        assert base.sw_defect == pytest.approx(-2.97)
        assert base.g_defect == pytest.approx(-0.99)

    def test_ten_agents_defaults(self):
        base = baselines(10, RewardSchedule(), 10)
        assert base.sw_cooperate == pytest.approx(-1.09)
        assert base.sw_defect == pytest.approx(-9.90)

    def test_single_step_cap(self):
        assert baselines(3, RewardSchedule(), 1).g_defect == pytest.approx(-0.9)

    def test_requires_two_agents(self):
        with pytest.raises(MetricUndefinedError):
            baselines(1, RewardSchedule(), 10)


class TestEfficiency:
    def test_one_step_success_is_one(self):
        base = baselines(3, RewardSchedule(), 10)
        assert efficiency([-1.00, -0.01, -0.01], base) == pytest.approx(1.0)

    def test_all_defect_is_zero(self):
        base = baselines(3, RewardSchedule(), 10)
        assert efficiency([-0.99, -0.99, -0.99], base) == pytest.approx(0.0)

    def test_success_at_step_three(self):
        base = baselines(3, RewardSchedule(), 10)
        returns = [-1.00 - 0.02, -0.01 - 0.02, -0.01 - 0.02]
        expected = (sum(returns) - (-2.97)) / (-1.02 - (-2.97))
        value = efficiency(returns, base)
        assert value == pytest.approx(expected)
        assert value == pytest.approx(0.96923, abs=1e-4)

    def test_realized_episodes_stay_in_unit_interval(self):
        base = baselines(3, RewardSchedule(), 10)
        for step in range(1, 11):
            penalty = -0.01 * (step - 1)
            returns = [-1.00 + penalty, -0.01 + penalty, -0.01 + penalty]
            assert 0.0 <= efficiency(returns, base) <= 1.0
        assert efficiency([-0.99] * 3, base) == 0.0

    def test_degenerate_config_raises(self):
        base = baselines(3, RewardSchedule(), 10)
        degenerate = type(base)(
            n_active=3, g_on_guard=0, g_served=0, g_defect=0, sw_cooperate=-1.0, sw_defect=-1.0
        )
        with pytest.raises(MetricUndefinedError):
            efficiency([-1.0, -1.0, -1.0], degenerate)


class TestSafetyAndIncentive:
    def test_equal_returns_give_safety_one(self):
        assert safety(-0.99, -0.99, DEFAULTS) == pytest.approx(1.0)

    def test_safety_midpoint(self):
        assert safety(-1.88, -0.99, DEFAULTS) == pytest.approx(0.5)

    def test_ic_served_agent_magnitude(self):
        value = incentive_compatibility(-0.01, -0.99, DEFAULTS)
        assert value == pytest.approx(0.98 / 1.78)
        assert value == pytest.approx(0.5506, abs=1e-4)

    def test_ic_on_guard_agent(self):
        value = incentive_compatibility(-1.00, -0.99, DEFAULTS)
        assert value == pytest.approx(-0.01 / 1.78)
        assert value == pytest.approx(-0.0056, abs=1e-4)

    def test_ic_identical_returns_zero(self):
        assert incentive_compatibility(-0.5, -0.5, DEFAULTS) == 0.0

    def test_zero_span_raises(self):
        flat = payoff_matrix(o=-0.5, a=-0.5, g=-1.0)
        with pytest.raises(MetricUndefinedError):
            safety(-1.0, -1.0, flat)
        with pytest.raises(MetricUndefinedError):
            incentive_compatibility(-1.0, -1.0, flat)


class TestJain:
    def test_equal_shares(self):
        assert jain([0.89, 0.89, 0.89]) == pytest.approx(1.0)

    def test_single_agent_concentration(self):
        assert jain([1.0, 0.0, 0.0]) == pytest.approx(1 / 3)

    def test_direct_formula(self):
        assert jain([2.0, 1.0, 1.0]) == pytest.approx(16 / 18)

    def test_active_subset(self):
        assert jain([5.0, 1.0, 1.0], active=[1, 2]) == pytest.approx(1.0)

    def test_all_zero_floor(self):
        assert jain([0.0, 0.0, 0.0]) == pytest.approx(1 / 3)
        assert jain([0.0, 0.0], active=[0, 1]) == pytest.approx(1 / 2)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0.0, 1000.0), min_size=1, max_size=10),
        st.floats(0.01, 100.0),
    )
    def test_scale_invariance_and_bounds(self, values, scale):
        base = jain(values)
        assert base == pytest.approx(jain([v * scale for v in values]))
        assert 1 / len(values) - 1e-12 <= base <= 1 + 1e-12

    def test_maximum_iff_equal_positive(self):
        assert jain([3.0, 3.0, 3.0, 3.0]) == pytest.approx(1.0)
        assert jain([3.0, 3.0, 3.0, 2.9]) < 1.0

    def test_empty_active_raises(self):
        with pytest.raises(MetricUndefinedError):
            jain([1.0, 2.0], active=[])


def _row(e, sf, ic, j, run=0, episode=1):
    return EpisodeMetrics(
        n_agents=3, mode=Mode.IMPOSED, run=run, episode=episode, active=(0, 1, 2),
        efficiency=e, safety_values=sf, ic_values=ic, jain=j, jain_degenerate=False,
        steps_taken=1, success=True, on_guard=0,
    )


class TestAggregation:
    def test_identical_fragments_zero_std(self):
        rows = [_row(0.5, (1.0,), (0.2,), 0.9, episode=i) for i in range(4)]
        cell = aggregate_cells(rows)[0]
        assert cell.e_std == 0.0
        assert cell.sf_std == 0.0
        assert cell.episodes == 4

    def test_population_std_of_two_points(self):
        rows = [_row(0.0, (), (), 0.5, episode=1), _row(1.0, (), (), 0.5, episode=2)]
        cell = aggregate_cells(rows)[0]
        assert cell.e_mean == pytest.approx(0.5)
        assert cell.e_std == pytest.approx(0.5)

    def test_grid_shape(self):
        rows = []
        for n in (3, 4):
            for mode in (Mode.FREE, Mode.IMPOSED):
                for episode in range(2):
                    row = _row(1.0, (1.0,), (0.0,), 1.0, episode=episode)
                    row.n_agents = n
                    row.mode = mode
                    rows.append(row)
        cells = aggregate_cells(rows)
        assert len(cells) == 4
        assert [(c.n_agents, c.mode.value) for c in cells] == [
            (3, "F"), (3, "I"), (4, "F"), (4, "I"),
        ]
