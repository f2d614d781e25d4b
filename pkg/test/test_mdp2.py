"""
Test cases for the two-client MDP solver, switching check and boundary compression
"""

import numpy as np
import pytest

from src.channel import ChannelParams
from src.exceptions import InvalidParameterError, SwitchingStructureError
from src.mdp2 import (
    ActionMode,
    MdpConfig,
    OutageTable,
    PolicyTable,
    SwitchingBoundaries,
    TwoClientAction,
    build_action_space,
    extract_boundaries,
    greedy_action,
    restrict_actions,
    rvi_solve,
    state_q_values,
    transition_kernel,
    verify_switching,
)


class TestActionSpace:
    """Test cases for action sets"""

    @pytest.mark.parametrize(
        "levels,rate,eliminate,expected",
        [
            (10, 1.0, True, (0, 6, 7, 8, 9, 10)),
            (10, 1.0, False, (0, 6, 7, 8, 9, 10)),
            (10, 2.0, True, (0, 8, 9, 10)),
            (2, 1.0, True, (0, 2)),
            (20, 1.0, False, (0, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20)),
            (20, 1.0, True, (0, 13, 14, 15, 16, 17, 18, 19, 20)),
        ],
    )
    def test_build_action_space(self, levels, rate, eliminate, expected):
        """Test raw and eliminated sets"""
        assert build_action_space(levels, rate, eliminate) == expected

    def test_levels_below_two(self):
        """Test that L < 2 is refused"""
        with pytest.raises(InvalidParameterError):
            build_action_space(1, 1.0)

    def test_restrict_actions(self):
        """Test OMA-only and NOMA-only subsets"""
        actions = build_action_space(10, 1.0)
        assert restrict_actions(actions, 10, ActionMode.OMA_ONLY) == (0, 10)
        assert restrict_actions(actions, 10, ActionMode.NOMA_ONLY) == (6, 7, 8, 9)
        with pytest.raises(InvalidParameterError):
            restrict_actions((0, 2), 2, ActionMode.NOMA_ONLY)

    def test_action_fields(self):
        """Test served sets and power fractions"""
        assert TwoClientAction(0, 10).served == (0,)
        assert TwoClientAction(10, 10).served == (1,)
        noma = TwoClientAction(8, 10)
        assert noma.served == (1, 0)
        assert noma.alpha2 == pytest.approx(0.8)
        assert noma.alpha1 == pytest.approx(0.2)
        assert not noma.is_oma
        with pytest.raises(InvalidParameterError):
            TwoClientAction(11, 10)


class TestOutageTable:
    """Test cases for per-action outage pairs"""

    def test_oma_endpoints_use_unit_outage(self, two_client_channel):
        """Test that OMA leaves the other client in certain outage"""
        table = OutageTable.from_channel(two_client_channel, 10, (0, 8, 10))
        p1, p2 = table.outage(0)
        assert p1 == pytest.approx(0.0614, abs=1e-4)
        assert p2 == 1.0
        assert table.outage(10)[0] == 1.0
        assert table.outage(8) == pytest.approx((0.2716, 0.3446), abs=1e-4)

    def test_missing_action(self, two_client_channel):
        """Test lookup of an action that was not tabulated"""
        table = OutageTable.from_channel(two_client_channel, 10, (0, 10))
        with pytest.raises(InvalidParameterError):
            table.outage(7)

    def test_synthetic_range_check(self):
        """Test that probabilities outside [0, 1] are refused"""
        with pytest.raises(InvalidParameterError):
            OutageTable.synthetic(10, (0, 5, 10), oma=(0.1, 0.1), noma=(0.2, 1.5))


class TestTransitionKernel:
    """Test cases for the one-slot dynamics"""

    def test_noma_kernel(self):
        """Test the four outcomes of a NOMA action"""
        kernel = transition_kernel((3, 5), TwoClientAction(8, 10), (0.2, 0.4))
        assert kernel[(1, 1)] == pytest.approx(0.48)
        assert kernel[(1, 6)] == pytest.approx(0.32)
        assert kernel[(4, 1)] == pytest.approx(0.12)
        assert kernel[(4, 6)] == pytest.approx(0.08)
        assert sum(kernel.values()) == pytest.approx(1.0)

    def test_oma_kernel_with_truncation(self):
        """Test that the unserved client ages and saturates at delta_max"""
        kernel = transition_kernel((10, 10), TwoClientAction(0, 10), (0.1, 1.0), delta_max=10)
        assert kernel == {(1, 10): pytest.approx(0.9), (10, 10): pytest.approx(0.1)}


class TestRviSolve:
    """Test cases for relative value iteration"""

    def test_18db_action_set_and_realized_actions(self, two_client_policy):
        """Test the eliminated action set and the actions the optimal policy actually takes"""
        assert two_client_policy.action_set == (0, 6, 7, 8, 9, 10)
        # α2 = 0.6 is beaten by α2 = 0.7 for both clients at this geometry, so a=6 is never chosen
        assert two_client_policy.realized_actions() == (0, 7, 8, 9, 10)
        assert 7 <= two_client_policy.action(1, 1) <= 9

    def test_18db_switching_structure(self, two_client_policy):
        """Test the monotone structure of the solved policy"""
        report = verify_switching(two_client_policy)
        assert report.passed, report.violations[:5]

    def test_18db_average_cost_bounds(self, two_client_policy):
        """Test that J* lies above the perfect-channel value 1 and h vanishes at the reference state"""
        assert 1.0 < two_client_policy.average_cost < 3.0
        assert two_client_policy.value_function[0, 0] == pytest.approx(0.0)

    def test_zero_outage_oma_alternates(self):
        """Test a periodic zero-outage chain: OMA only, J* = 1.5"""
        table = OutageTable.synthetic(10, (0, 10), oma=(0.0, 0.0), noma=(0.0, 0.0))
        config = MdpConfig(channel=None, actions=(0, 10), levels=10, delta_max=10)
        policy = rvi_solve(config, table)
        assert policy.average_cost == pytest.approx(1.5, abs=1e-6)

    def test_zero_outage_noma_serves_both(self):
        """Test that a perfect NOMA split keeps both ages at 1"""
        actions = build_action_space(10, 1.0)
        table = OutageTable.synthetic(10, actions, oma=(0.0, 0.0), noma=(0.0, 0.0))
        config = MdpConfig(channel=None, levels=10, delta_max=10)
        policy = rvi_solve(config, table)
        assert policy.average_cost == pytest.approx(1.0, abs=1e-6)
        assert policy.action(1, 1) == 6

    def test_needs_channel_or_provider(self):
        """Test that a solve without outage information is refused"""
        with pytest.raises(InvalidParameterError):
            rvi_solve(MdpConfig(channel=None, delta_max=5))

    def test_config_validation(self, two_client_channel):
        """Test rejected configurations"""
        with pytest.raises(InvalidParameterError):
            MdpConfig(channel=two_client_channel, delta_max=1)
        with pytest.raises(InvalidParameterError):
            MdpConfig(channel=two_client_channel, weights=(0.7, 0.7))
        with pytest.raises(InvalidParameterError):
            MdpConfig(channel=ChannelParams.from_snr_db((1.0, 2.0, 3.0), 10.0))

    def test_elimination_keeps_average_cost(self):
        """Test that dropping dominated splits does not change J*"""
        channel = ChannelParams.from_snr_db((2.0, 4.0), 18.0)
        full = rvi_solve(MdpConfig(channel=channel, levels=20, delta_max=30, eliminate=False))
        reduced = rvi_solve(MdpConfig(channel=channel, levels=20, delta_max=30, eliminate=True))
        assert len(reduced.action_set) < len(full.action_set)
        assert reduced.average_cost == pytest.approx(full.average_cost, abs=1e-6)

    def test_modes_order_average_cost(self, two_client_channel):
        """Test that restricting the action set never lowers J*"""
        adaptive = rvi_solve(MdpConfig(channel=two_client_channel, delta_max=40))
        oma = rvi_solve(MdpConfig(channel=two_client_channel, delta_max=40, mode=ActionMode.OMA_ONLY))
        noma = rvi_solve(MdpConfig(channel=two_client_channel, delta_max=40, mode=ActionMode.NOMA_ONLY))
        assert adaptive.average_cost <= oma.average_cost + 1e-6
        assert adaptive.average_cost <= noma.average_cost + 1e-6

    def test_greedy_matches_table(self, two_client_policy, two_client_mdp_config, two_client_channel):
        """Test that the table-free greedy action reproduces the stored table"""
        provider = OutageTable.from_channel(two_client_channel, two_client_mdp_config.levels, two_client_mdp_config.actions)
        for state in [(1, 1), (1, 5), (5, 1), (3, 7), (12, 4), (40, 40), (100, 100)]:
            expected = two_client_policy.action(*state)
            assert greedy_action(state, two_client_policy.value_function, provider, two_client_mdp_config) == expected

    def test_policy_text_round_trip(self, two_client_policy):
        """Test writing and reading the policy file"""
        restored = PolicyTable.from_text(two_client_policy.to_text())
        assert np.array_equal(restored.actions, two_client_policy.actions)
        assert restored.action_set == two_client_policy.action_set
        assert restored.levels == 10
        assert restored.average_cost == pytest.approx(two_client_policy.average_cost, rel=1e-10)
        assert restored.header["distances"] == "2 4"

    def test_action_clamps_beyond_truncation(self, two_client_policy):
        """Test that ages beyond delta_max use the boundary entries"""
        assert two_client_policy.action(500, 3) == two_client_policy.action(100, 3)


class TestOptimalityEquation:
    """Test cases for the returned (h, J*) against the average-cost optimality equation"""

    @pytest.fixture(scope="class")
    def small_config(self) -> MdpConfig:
        return MdpConfig(channel=ChannelParams.from_snr_db((2.0, 4.0), 18.0), delta_max=30)

    @pytest.fixture(scope="class")
    def small_policy(self, small_config) -> PolicyTable:
        return rvi_solve(small_config)

    def test_bellman_residual(self, small_config, small_policy):
        """Test |min_a Q(s, a) − J* − h(s)| ≤ span_tol on every state of the grid"""
        provider = OutageTable.from_channel(small_config.channel, small_config.levels, small_config.actions)
        h = small_policy.value_function
        worst = 0.0
        for d1 in range(1, 31):
            for d2 in range(1, 31):
                q = state_q_values((d1, d2), h, provider, small_config)
                worst = max(worst, abs(min(q.values()) - small_policy.average_cost - h[d1 - 1, d2 - 1]))
        assert worst <= small_config.span_tol + 1e-12

    def test_reference_state_does_not_change_average_cost(self, small_config, small_policy):
        """Test that normalizing at (2,2) instead of (1,1) gives the same J*"""
        config = MdpConfig(channel=small_config.channel, delta_max=30, reference_state=(2, 2))
        shifted = rvi_solve(config)
        assert shifted.average_cost == pytest.approx(small_policy.average_cost, abs=1e-7)
        assert shifted.value_function[1, 1] == pytest.approx(0.0)

    def test_truncation_stability(self, two_client_policy, two_client_channel):
        """Test that growing the grid from 60 to 100 moves J* by less than 1e-3"""
        smaller = rvi_solve(MdpConfig(channel=two_client_channel, delta_max=60))
        assert abs(smaller.average_cost - two_client_policy.average_cost) < 1e-3

    def test_eliminated_splits_never_strictly_better(self):
        """Test state by state that the reduced set attains the minimum over the full set"""
        channel = ChannelParams.from_snr_db((2.0, 4.0), 18.0)
        config = MdpConfig(channel=channel, levels=20, delta_max=30, eliminate=False)
        full = rvi_solve(config)
        provider = OutageTable.from_channel(channel, 20, config.actions)
        reduced = build_action_space(20, 1.0, eliminate=True)
        assert set(reduced) < set(config.actions)
        for d1 in range(1, 31):
            for d2 in range(1, 31):
                q = state_q_values((d1, d2), full.value_function, provider, config)
                assert min(q[a] for a in reduced) <= min(q.values()) + 1e-9

    @pytest.mark.parametrize("shift", [-3.25, 17.0])
    def test_constant_shift_keeps_greedy_choice(self, small_config, small_policy, shift):
        """Test that adding a constant to h shifts every Q value and keeps the greedy action optimal"""
        provider = OutageTable.from_channel(small_config.channel, small_config.levels, small_config.actions)
        h = small_policy.value_function
        for state in [(1, 1), (1, 6), (6, 1), (4, 9), (15, 15), (30, 2)]:
            q = state_q_values(state, h, provider, small_config)
            q_shifted = state_q_values(state, h + shift, provider, small_config)
            for a in q:
                assert q_shifted[a] == pytest.approx(q[a] + shift, abs=1e-9)
            chosen = greedy_action(state, h + shift, provider, small_config)
            assert q[chosen] <= min(q.values()) + 1e-9


class TestSwitchingBoundaries:
    """Test cases for the switching check and boundary compression"""

    @staticmethod
    def _table(actions: np.ndarray) -> PolicyTable:
        return PolicyTable(
            actions=actions,
            action_set=(0, 6, 8, 10),
            levels=10,
            average_cost=0.0,
            value_function=np.zeros(actions.shape),
        )

    def test_violations_are_reported(self):
        """Test that a non-monotone row is detected"""
        table = self._table(np.array([[0, 8, 6], [0, 6, 10], [0, 0, 10]]))
        report = verify_switching(table)
        assert not report.passed
        assert ((1, 2), (1, 3)) in report.violations
        with pytest.raises(SwitchingStructureError):
            extract_boundaries(table)

    def test_boundaries_reconstruct_policy(self, two_client_policy):
        """Test that the compressed form rebuilds the full table"""
        boundaries = extract_boundaries(two_client_policy)
        assert np.array_equal(boundaries.reconstruct(), two_client_policy.actions)
        for state in [(1, 1), (2, 9), (9, 2), (100, 1), (1, 100), (130, 7)]:
            assert boundaries.action(*state) == two_client_policy.action(*state)

    def test_boundary_text_round_trip(self, two_client_policy):
        """Test writing and reading the boundary file"""
        boundaries = extract_boundaries(two_client_policy)
        restored = SwitchingBoundaries.from_text(boundaries.to_text())
        assert restored == boundaries

    def test_constant_policy_has_no_thresholds(self):
        """Test that a policy that never switches compresses to start actions only"""
        boundaries = extract_boundaries(self._table(np.full((4, 4), 8)))
        assert boundaries.is_empty
        assert boundaries.action(3, 3) == 8
