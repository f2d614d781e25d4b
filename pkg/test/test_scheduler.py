"""
Test cases for per-slot scheduling decisions
"""

import math

import numpy as np
import pytest

from src.channel import ChannelParams
from src.exceptions import CombinatorialGuardError, InvalidParameterError
from src.mdp2 import OutageTable, TwoClientAction, build_action_space, verify_switching
from src.scheduler import (
    AoIState,
    DecisionKind,
    adaptive_decision,
    adaptive_noma_oma,
    exhaustive_mw,
    expected_drop2,
    fixed_k_noma,
    maxweight_policy_table,
    mw_oma,
    round_robin,
    two_client_decision,
    two_client_maxweight,
)


class TestAoIState:
    """Test cases for the state record"""

    def test_uniform_weights(self):
        """Test equal weights summing to 1"""
        state = AoIState.uniform((3, 1, 2))
        assert state.weights == pytest.approx((1 / 3,) * 3)
        assert state.n_clients == 3

    @pytest.mark.parametrize(
        "ages,weights",
        [((0, 1), (0.5, 0.5)), ((1, 1), (0.6, 0.6)), ((1, 1), (1.0,)), ((), ())],
    )
    def test_invalid_states(self, ages, weights):
        """Test zero ages, bad weights and mismatched lengths"""
        with pytest.raises(InvalidParameterError):
            AoIState(ages, weights)

    def test_hashable(self):
        """Test that equal states are interchangeable cache keys"""
        assert hash(AoIState.uniform((2, 3))) == hash(AoIState((2, 3), (0.5, 0.5)))


class TestTwoClientMaxWeight:
    """Test cases for the two-client max-weight rule"""

    def test_expected_drop_reference(self, two_client_channel):
        """Test the expected drop at (1,1) for every eliminated action"""
        state = AoIState.uniform((1, 1))
        actions = build_action_space(10, 1.0)
        table = OutageTable.from_channel(two_client_channel, 10, actions)
        values = {a: expected_drop2(state, TwoClientAction(a, 10), table.outage(a)) for a in actions}
        assert values[8] == pytest.approx(-0.3081, abs=1e-4)
        assert values[0] == pytest.approx(-0.5307, abs=1e-4)
        assert values[10] == pytest.approx(-0.6120, abs=1e-4)
        assert values[6] == pytest.approx(-0.4951, abs=1e-4)
        assert max(values, key=values.get) == 8

    def test_picks_noma_at_equal_ages(self, two_client_channel):
        """Test that (1,1) picks a=8"""
        assert two_client_maxweight(AoIState.uniform((1, 1)), two_client_channel).index == 8

    def test_zero_weight_client_ignored(self, two_client_channel):
        """Test that w2 = 0 always serves client 1 alone"""
        for ages in [(1, 1), (1, 50), (7, 3)]:
            action = two_client_maxweight(AoIState(ages, (1.0, 0.0)), two_client_channel)
            assert action.index == 0

    def test_stale_near_client_at_low_snr(self):
        """Test that (50, 1) at 10 dB serves the near client alone"""
        channel = ChannelParams.from_snr_db((2.0, 4.0), 10.0)
        assert two_client_maxweight(AoIState.uniform((50, 1)), channel).index == 0

    def test_decision_record(self, two_client_channel):
        """Test the success pair, expected drop and trace token"""
        actions = build_action_space(10, 1.0)
        table = OutageTable.from_channel(two_client_channel, 10, actions)
        state = AoIState.uniform((1, 1))
        decision = two_client_decision(state, TwoClientAction(8, 10), two_client_channel, table)
        assert decision.kind is DecisionKind.TWO_CLIENT
        assert decision.success == pytest.approx((1 - 0.2716, 1 - 0.3446), abs=1e-4)
        assert decision.expected_drop == pytest.approx(-0.3081, abs=1e-4)
        assert decision.encode() == "a:8"
        assert decision.served == (1, 0)

        oma = two_client_decision(state, TwoClientAction(0, 10), two_client_channel, table)
        assert oma.success[1] == 0.0
        assert oma.encode() == "a:0"

    def test_requires_two_clients(self, five_client_channel):
        """Test refusal for N != 2"""
        with pytest.raises(InvalidParameterError):
            two_client_maxweight(AoIState.uniform((1,) * 5), five_client_channel)

    def test_policy_table_is_switching(self, two_client_channel):
        """Test the switching structure of the tabulated max-weight rule"""
        table = maxweight_policy_table(two_client_channel, delta_max=60)
        assert verify_switching(table).passed
        assert math.isnan(table.average_cost)
        assert table.action(1, 1) == 8


class TestMwOma:
    """Test cases for the OMA max-weight rule"""

    def test_single_client(self):
        """Test N=1"""
        channel = ChannelParams.from_snr_db((3.0,), 10.0)
        decision = mw_oma(AoIState.uniform((5,)), channel)
        assert decision.served == (0,)
        assert decision.kind is DecisionKind.OMA
        assert decision.encode() == "oma:1"

    def test_equal_channels_pick_oldest(self):
        """Test equal weights and equal outages: the oldest client wins"""
        channel = ChannelParams.from_snr_db((2.0,) * 5, 20.0)
        assert mw_oma(AoIState.uniform((9, 3, 3, 3, 3)), channel).served == (0,)

    def test_equal_ages_pick_nearest(self, five_client_channel):
        """Test that equal ages serve the client with the lowest outage"""
        assert mw_oma(AoIState.uniform((4,) * 5), five_client_channel).served == (4,)

    def test_scale_invariance(self, five_client_channel):
        """Test that scaling all ages does not change the choice"""
        ages = (5, 2, 7, 1, 3)
        first = mw_oma(AoIState.uniform(ages), five_client_channel).served
        scaled = mw_oma(AoIState.uniform(tuple(3 * a for a in ages)), five_client_channel).served
        assert first == scaled

    def test_full_power(self, five_client_channel):
        """Test that the served client gets the whole budget"""
        decision = mw_oma(AoIState.uniform((1, 1, 1, 1, 1)), five_client_channel)
        assert decision.allocation.total_power == pytest.approx(five_client_channel.power_budget)


class TestAllocationPolicies:
    """Test cases for fixed-K and adaptive NOMA/OMA"""

    def test_fixed_k_one_matches_mw_oma(self, five_client_channel):
        """Test that K=1 is the OMA max-weight rule on random states"""
        rng = np.random.default_rng(3)
        for _ in range(20):
            state = AoIState.uniform(tuple(int(a) for a in rng.integers(1, 30, size=5)))
            fixed = fixed_k_noma(state, five_client_channel, 1)
            oma = mw_oma(state, five_client_channel)
            assert fixed.served == oma.served
            assert fixed.expected_drop == pytest.approx(oma.expected_drop, rel=1e-12)

    def test_fixed_k_range(self, five_client_channel):
        """Test that K outside [1, N] is refused"""
        with pytest.raises(InvalidParameterError):
            fixed_k_noma(AoIState.uniform((1,) * 5), five_client_channel, 6)

    def test_adaptive_at_least_fixed_k(self, five_client_channel):
        """Test that the adaptive choice is never worse than any fixed K"""
        state = AoIState.uniform((2, 6, 1, 3, 4))
        adaptive = adaptive_decision(state, five_client_channel)
        for k in range(1, 6):
            assert adaptive.expected_drop >= fixed_k_noma(state, five_client_channel, k).expected_drop - 1e-12

    def test_adaptive_cache_returns_same_decision(self, five_client_channel):
        """Test the memoized wrapper"""
        state = AoIState.uniform((1, 2, 3, 4, 5))
        assert adaptive_noma_oma(state, five_client_channel) == adaptive_decision(state, five_client_channel)

    def test_decision_token_is_one_based(self, five_client_channel):
        """Test NOMA trace tokens in decoding order"""
        decision = adaptive_decision(AoIState.uniform((1,) * 5), five_client_channel)
        if decision.kind is DecisionKind.NOMA:
            expected = "/".join(str(i + 1) for i in decision.served)
            assert decision.encode() == f"noma:{expected}"
            assert list(decision.served) == sorted(decision.served)


class TestExhaustive:
    """Test cases for the grid-search max-weight policy"""

    def test_low_snr_serves_one_client(self):
        """Test that NOMA does not pay at 0 dB"""
        channel = ChannelParams.from_snr_db((2.0, 1.0), 0.0)
        decision = exhaustive_mw(AoIState.uniform((1, 1)), channel, grid_levels=50)
        assert len(decision.served) == 1

    def test_high_snr_delivers_everything(self):
        """Test that the drop tends to Σ w·Δ − 1 as p̄ grows"""
        channel = ChannelParams.from_snr_db((2.0, 1.0), 200.0)
        state = AoIState.uniform((3, 5))
        decision = exhaustive_mw(state, channel, grid_levels=10)
        assert decision.expected_drop == pytest.approx(3.0, abs=1e-9)

    def test_not_worse_than_oma(self):
        """Test that the OMA corners are on the grid"""
        channel = ChannelParams.from_snr_db((3.0, 2.0, 1.0), 20.0)
        for ages in [(1, 1, 1), (5, 1, 2), (1, 9, 1)]:
            state = AoIState.uniform(ages)
            grid = exhaustive_mw(state, channel, grid_levels=40)
            assert grid.expected_drop >= mw_oma(state, channel).expected_drop - 1e-12

    def test_close_to_adaptive(self):
        """Test that the adaptive policy is within its envelope gap of the fine grid"""
        channel = ChannelParams.from_snr_db((3.0, 2.0, 1.0), 20.0)
        rng = np.random.default_rng(17)
        for _ in range(5):
            state = AoIState.uniform(tuple(int(a) for a in rng.integers(1, 10, size=3)))
            grid = exhaustive_mw(state, channel, grid_levels=200)
            adaptive = adaptive_decision(state, channel)
            gap = math.exp(-2.0) * sum(w * a for w, a in zip(state.weights, state.ages))
            assert grid.expected_drop <= adaptive.expected_drop + gap + 1e-9

    @pytest.mark.slow
    def test_close_to_adaptive_many_states(self):
        """Test the envelope-gap closeness on 100 random three-client states at 20 dB"""
        channel = ChannelParams.from_snr_db((3.0, 2.0, 1.0), 20.0)
        rng = np.random.default_rng(41)
        for _ in range(100):
            state = AoIState.uniform(tuple(int(a) for a in rng.integers(1, 20, size=3)))
            grid = exhaustive_mw(state, channel, grid_levels=200)
            adaptive = adaptive_decision(state, channel)
            gap = math.exp(-2.0) * sum(w * a for w, a in zip(state.weights, state.ages))
            assert grid.expected_drop <= adaptive.expected_drop + gap + 1e-9

    def test_guard_and_grid_checks(self, five_client_channel):
        """Test the client-count guard and the minimum grid"""
        with pytest.raises(CombinatorialGuardError):
            exhaustive_mw(AoIState.uniform((1,) * 5), five_client_channel)
        channel = ChannelParams.from_snr_db((2.0, 1.0), 10.0)
        with pytest.raises(InvalidParameterError):
            exhaustive_mw(AoIState.uniform((1, 1)), channel, grid_levels=5)


class TestRoundRobin:
    """Test cases for round-robin OMA"""

    def test_cycles_through_clients(self):
        """Test slot mod N"""
        channel = ChannelParams.from_snr_db((3.0, 2.0, 1.0), 10.0)
        state = AoIState.uniform((1, 1, 1))
        assert [round_robin(state, channel, slot).served for slot in range(4)] == [(0,), (1,), (2,), (0,)]
