"""
Per-slot scheduling decisions

Every policy maps the current ages to a Decision: which clients are served,
with which powers, and the resulting per-client success probabilities. The
max-weight family picks the decision with the largest expected weighted age
drop Σ_i w_i(1−P_i)Δ_i − 1.
"""
import functools
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .allocator import Candidate, enumerate_allocate
from .channel import ChannelParams, PowerAllocation, decoding_order, success_probabilities
from .config import CONFIG
from .exceptions import CombinatorialGuardError, InvalidParameterError
from .mdp2 import (
    OutageProvider,
    OutageTable,
    PolicyTable,
    TwoClientAction,
    build_action_space,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AoIState:
    """Ages of all clients with their weights"""
    ages: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        ages = tuple(int(a) for a in self.ages)
        weights = tuple(float(w) for w in self.weights)
        if not ages:
            raise InvalidParameterError("state needs at least one client")
        if len(ages) != len(weights):
            raise InvalidParameterError(f"{len(ages)} ages but {len(weights)} weights")
        if any(a < 1 for a in ages):
            raise InvalidParameterError(f"ages must be integers >= 1: {ages}")
        if any(w < 0.0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise InvalidParameterError(f"weights must be nonnegative and sum to 1: {weights}")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, ages: Sequence[int]) -> "AoIState":
        """State with equal weights 1/N"""
        n = len(ages)
        return cls(ages=tuple(ages), weights=(1.0 / n,) * n)

    @property
    def n_clients(self) -> int:
        return len(self.ages)

    def with_ages(self, ages: Sequence[int]) -> "AoIState":
        return AoIState(ages=tuple(ages), weights=self.weights)


class DecisionKind(Enum):
    OMA = "oma"
    NOMA = "noma"
    TWO_CLIENT = "a"


@dataclass(frozen=True)
class Decision:
    """
    Outcome of one scheduling decision

    Attributes:
        kind: OMA, NOMA or a two-client action index
        allocation: Served clients and powers (decoding order)
        success: Delivery probability of every client, zero when unserved
        expected_drop: Σ_i w_i(1−P_i)Δ_i − 1 at the deciding state
        action: Two-client action for TWO_CLIENT decisions
    """
    kind: DecisionKind
    allocation: PowerAllocation
    success: tuple[float, ...]
    expected_drop: float
    action: TwoClientAction | None = None

    @property
    def served(self) -> tuple[int, ...]:
        return self.allocation.served

    def success_probabilities(self) -> np.ndarray:
        return np.asarray(self.success)

    def encode(self) -> str:
        """Trace token: a:<index>, oma:<client> or noma:<c1>/<c2>/... with 1-based clients in decoding order"""
        if self.kind is DecisionKind.TWO_CLIENT:
            return f"a:{self.action.index}"
        clients = "/".join(str(i + 1) for i in self.served)
        return f"{self.kind.value}:{clients}"


def _expected_drop(state: AoIState, success: Sequence[float]) -> float:
    return sum(w * p * a for w, p, a in zip(state.weights, success, state.ages)) - 1.0


def decision_from_allocation(state: AoIState, allocation: PowerAllocation, channel: ChannelParams) -> Decision:
    """Wrap an allocation with its exact success probabilities"""
    success = tuple(float(p) for p in success_probabilities(allocation, channel))
    kind = DecisionKind.OMA if allocation.k == 1 else DecisionKind.NOMA
    return Decision(kind=kind, allocation=allocation, success=success, expected_drop=_expected_drop(state, success))


def _require_two_clients(state: AoIState, channel: ChannelParams) -> None:
    if state.n_clients != 2 or channel.n_clients != 2:
        raise InvalidParameterError("two-client policies need exactly two clients")


def expected_drop2(state: AoIState, action: TwoClientAction, outage: tuple[float, float]) -> float:
    """
    Expected weighted age drop of a two-client action

    Args:
        state: Ages (Δ1, Δ2) with weights
        action: Power-split action
        outage: (P1, P2) for the action, with outage 1 for a client that OMA leaves unserved
    """
    p1, p2 = outage
    if action.index == 0:
        p2 = 1.0
    elif action.index == action.levels:
        p1 = 1.0
    return _expected_drop(state, (1.0 - p1, 1.0 - p2))


def two_client_allocation(action: TwoClientAction, channel: ChannelParams) -> PowerAllocation:
    """Raw powers of a two-client action: α2·p̄ to client 2 (decoded first) and α1·p̄ to client 1"""
    budget = channel.power_budget
    if action.index == 0:
        return PowerAllocation.single(0, 2, budget)
    if action.index == action.levels:
        return PowerAllocation.single(1, 2, budget)
    return PowerAllocation.from_raw((1, 0), (action.alpha2 * budget, action.alpha1 * budget), 2, channel.rate_factor)


def two_client_maxweight(
    state: AoIState,
    channel: ChannelParams,
    levels: int = 10,
    eliminate: bool = True,
    outage_provider: OutageProvider | None = None,
) -> TwoClientAction:
    """Action with the largest expected age drop over the two-client action set, smallest index on ties"""
    _require_two_clients(state, channel)
    actions = build_action_space(levels, channel.target_rate, eliminate)
    provider = outage_provider or OutageTable.from_channel(channel, levels, actions)
    best, best_value = actions[0], -math.inf
    for a in actions:
        action = TwoClientAction(a, levels)
        value = expected_drop2(state, action, provider.outage(a))
        if value > best_value:
            best, best_value = a, value
    return TwoClientAction(best, levels)


def two_client_decision(
    state: AoIState,
    action: TwoClientAction,
    channel: ChannelParams,
    outage_provider: OutageProvider,
) -> Decision:
    """Decision record for a two-client action"""
    p1, p2 = outage_provider.outage(action.index)
    success = (0.0 if action.index == action.levels else 1.0 - p1, 0.0 if action.index == 0 else 1.0 - p2)
    return Decision(
        kind=DecisionKind.TWO_CLIENT,
        allocation=two_client_allocation(action, channel),
        success=success,
        expected_drop=_expected_drop(state, success),
        action=action,
    )


def maxweight_policy_table(
    channel: ChannelParams,
    weights: tuple[float, float] = (0.5, 0.5),
    levels: int = 10,
    delta_max: int = 100,
    eliminate: bool = True,
    outage_provider: OutageProvider | None = None,
) -> PolicyTable:
    """Tabulate two_client_maxweight over the truncated grid (average cost left as NaN)"""
    actions = build_action_space(levels, channel.target_rate, eliminate)
    table = outage_provider or OutageTable.from_channel(channel, levels, actions)
    ages = np.arange(1, delta_max + 1, dtype=float)
    best = np.full((delta_max, delta_max), -np.inf)
    policy = np.zeros((delta_max, delta_max), dtype=int)
    for a in actions:
        p1, p2 = table.outage(a)
        values = weights[0] * (1.0 - p1) * ages[:, None] + weights[1] * (1.0 - p2) * ages[None, :]
        better = values > best
        policy[better] = a
        best[better] = values[better]
    return PolicyTable(
        actions=policy,
        action_set=actions,
        levels=levels,
        average_cost=math.nan,
        value_function=np.zeros((delta_max, delta_max)),
    )


def mw_oma(state: AoIState, channel: ChannelParams) -> Decision:
    """Serve alone, at full power, the client with the largest w_i(1−P_i^O)Δ_i (lowest index on ties)"""
    budget = channel.power_budget
    scores = [
        w * a * math.exp(-channel.outage_scale(i) / budget)
        for i, (w, a) in enumerate(zip(state.weights, state.ages))
    ]
    client = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return decision_from_allocation(state, PowerAllocation.single(client, channel.n_clients, budget), channel)


def _candidate_decision(state: AoIState, candidate: Candidate, channel: ChannelParams) -> Decision:
    return decision_from_allocation(state, candidate.allocation, channel)


def fixed_k_noma(state: AoIState, channel: ChannelParams, k: int) -> Decision:
    """Best allocation serving exactly k clients (subset enumeration for this k only)"""
    if not 1 <= k <= channel.n_clients:
        raise InvalidParameterError(f"K must lie in [1, {channel.n_clients}], got {k}")
    result = enumerate_allocate(state, channel, sizes=(k,))
    return _candidate_decision(state, result.per_k[k], channel)


def adaptive_decision(state: AoIState, channel: ChannelParams) -> Decision:
    """Best served set and powers over every subset size, ranked by the exact objective"""
    result = enumerate_allocate(state, channel)
    return _candidate_decision(state, result.best, channel)


# states and channels are immutable and hashable, so decisions are keyed on them directly
_adaptive_cached = functools.lru_cache(maxsize=max(CONFIG.simulation.decision_cache_size, 0))(adaptive_decision)


def adaptive_noma_oma(state: AoIState, channel: ChannelParams) -> Decision:
    """Memoized adaptive_decision (process-wide LRU of CONFIG.simulation.decision_cache_size entries)"""
    return _adaptive_cached(state, channel)


@functools.lru_cache(maxsize=None)
def _compositions(parts: int, total: int) -> np.ndarray:
    """All nonnegative integer vectors of length parts with sum <= total"""
    if parts == 1:
        grid = np.arange(total + 1)[:, None]
    else:
        grid = np.concatenate([
            np.column_stack((np.full(len(rest), first), rest))
            for first in range(total + 1)
            for rest in (_compositions(parts - 1, total - first),)
        ])
    grid.setflags(write=False)
    return grid


def exhaustive_mw(
    state: AoIState,
    channel: ChannelParams,
    grid_levels: int = 200,
    guard: int | None = None,
) -> Decision:
    """
    Max-weight decision by grid search over raw power splits

    Powers take the values p̄·n_i/G with Σ n_i ≤ G; clients with zero power are
    unserved, the rest are decoded farthest first and scored with the exact
    K-user outage model.

    Raises:
        CombinatorialGuardError: N above the guard (default CONFIG.allocator.exhaustive_guard)
    """
    n = channel.n_clients
    guard = CONFIG.allocator.exhaustive_guard if guard is None else guard
    if n > guard:
        raise CombinatorialGuardError(f"exhaustive power grid over N={n} clients refused; guard is N <= {guard}")
    if grid_levels < 10:
        raise InvalidParameterError(f"grid_levels must be >= 10, got {grid_levels}")
    if state.n_clients != n:
        raise InvalidParameterError(f"state has {state.n_clients} ages but the channel has {n} clients")

    order = decoding_order(range(n), channel)
    c = np.array([state.weights[i] * state.ages[i] for i in order])
    s = np.array([channel.outage_scale(i) for i in order])
    r = channel.rate_factor
    unit = channel.power_budget / grid_levels

    best_value, best_point = -math.inf, None
    for first in range(grid_levels + 1):
        rest = _compositions(n - 1, grid_levels - first) if n > 1 else np.zeros((1, 0), dtype=int)
        counts = np.column_stack((np.full(len(rest), first), rest))
        raw = counts * unit
        tail = np.cumsum(raw[:, ::-1], axis=1)[:, ::-1]
        hat = raw - r * (tail - raw)
        served = raw > 0.0
        # unserved clients do not constrain later decoders
        prefix = np.minimum.accumulate(np.where(served, hat, np.inf), axis=1)
        ok = served & (prefix > 0.0)
        values = np.where(ok, c * np.exp(-s / np.where(ok, prefix, 1.0)), 0.0).sum(axis=1)
        idx = int(np.argmax(values))
        if values[idx] > best_value:
            best_value, best_point = float(values[idx]), counts[idx]

    powers = best_point * unit
    served = tuple(order[k] for k in range(n) if best_point[k] > 0)
    allocation = PowerAllocation.from_raw(
        served, [powers[order.index(i)] for i in served], n, r
    )
    logger.debug(f"[scheduler] exhaustive grid G={grid_levels} served={served} objective={best_value:.6f}")
    return decision_from_allocation(state, allocation, channel)


def round_robin(state: AoIState, channel: ChannelParams, slot: int) -> Decision:
    """OMA to client slot mod N at full power"""
    client = slot % channel.n_clients
    return decision_from_allocation(state, PowerAllocation.single(client, channel.n_clients, channel.power_budget), channel)
