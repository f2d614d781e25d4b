"""
Simulation policies

A policy is resolved once from a PolicySpec (name + params) and then asked for
a Decision every slot. Resolved policies are plain picklable objects so that
replications can run in worker processes; anything expensive (MDP solves) is
done at resolve time in the parent.
"""
import functools
import logging
from dataclasses import dataclass, field
from typing import Any

from ..channel import ChannelParams
from ..config import CONFIG
from ..exceptions import AoISchedError, PolicyResolutionError
from ..mdp2 import (
    ActionMode,
    MdpConfig,
    OutageTable,
    PolicyTable,
    SwitchingBoundaries,
    TwoClientAction,
    build_action_space,
    extract_boundaries,
    rvi_solve,
)
from ..scheduler import (
    AoIState,
    Decision,
    adaptive_decision,
    exhaustive_mw,
    fixed_k_noma,
    maxweight_policy_table,
    mw_oma,
    round_robin,
    two_client_decision,
    two_client_maxweight,
)

logger = logging.getLogger(__name__)

_MDP_PARAMS = {"mode", "levels", "delta_max", "eliminate", "span_tol"}

POLICY_PARAMS: dict[str, set[str]] = {
    "mdp": _MDP_PARAMS,
    "mdp-boundary": _MDP_PARAMS,
    "maxweight2": {"levels", "eliminate"},
    "mw-oma": set(),
    "ap-noma-f-k": {"k", "cache_size"},
    "ap-n-oma": {"cache_size"},
    "mw-n-oma": {"grid_levels", "max_clients", "cache_size"},
    "round-robin": set(),
}

TWO_CLIENT_POLICIES = {"mdp", "mdp-boundary", "maxweight2"}


@dataclass(frozen=True)
class PolicySpec:
    """Policy identifier with its parameters and an optional display label"""
    name: str
    params: dict[str, Any] = field(default_factory=dict, hash=False)
    label: str | None = None

    @property
    def display(self) -> str:
        if self.label:
            return self.label
        if not self.params:
            return self.name
        inner = ",".join(f"{key}={value}" for key, value in sorted(self.params.items()))
        return f"{self.name}[{inner}]"


class SchedulingPolicy:
    """Base class: one decision per slot"""

    name = "policy"

    def decide(self, state: AoIState, slot: int) -> Decision:
        raise NotImplementedError

    def __call__(self, state: AoIState, slot: int) -> Decision:
        return self.decide(state, slot)


class MdpTablePolicy(SchedulingPolicy):
    """Looks the action up in a solved PolicyTable (ages clamp at delta_max)"""

    name = "mdp"

    def __init__(self, table: PolicyTable, channel: ChannelParams, outages: OutageTable):
        self.table = table
        self.channel = channel
        self.outages = outages

    def decide(self, state: AoIState, slot: int) -> Decision:
        action = TwoClientAction(self.table.action(*state.ages), self.table.levels)
        return two_client_decision(state, action, self.channel, self.outages)


class BoundaryPolicy(SchedulingPolicy):
    """Acts from switching boundaries only, without the full table"""

    name = "mdp-boundary"

    def __init__(self, boundaries: SwitchingBoundaries, levels: int, channel: ChannelParams, outages: OutageTable):
        self.boundaries = boundaries
        self.levels = levels
        self.channel = channel
        self.outages = outages

    def decide(self, state: AoIState, slot: int) -> Decision:
        action = TwoClientAction(self.boundaries.action(*state.ages), self.levels)
        return two_client_decision(state, action, self.channel, self.outages)


class MaxWeight2Policy(SchedulingPolicy):
    """Two-client max-weight rule, tabulated once over the truncated age grid"""

    name = "maxweight2"

    def __init__(
        self,
        channel: ChannelParams,
        weights: tuple[float, float] = (0.5, 0.5),
        levels: int = 10,
        eliminate: bool = True,
        delta_max: int = 100,
    ):
        self.channel = channel
        self.weights = tuple(weights)
        self.levels = levels
        self.eliminate = eliminate
        actions = build_action_space(levels, channel.target_rate, eliminate)
        self.outages = OutageTable.from_channel(channel, levels, actions)
        self.table = maxweight_policy_table(channel, self.weights, levels, delta_max, eliminate, self.outages)

    def decide(self, state: AoIState, slot: int) -> Decision:
        d1, d2 = state.ages
        limit = self.table.delta_max
        if d1 <= limit and d2 <= limit and state.weights == self.weights:
            action = TwoClientAction(self.table.action(d1, d2), self.levels)
        else:
            # the argmax depends on the age ratio, so ages off the grid are not clamped
            action = two_client_maxweight(state, self.channel, self.levels, self.eliminate, self.outages)
        return two_client_decision(state, action, self.channel, self.outages)


class MwOmaPolicy(SchedulingPolicy):
    name = "mw-oma"

    def __init__(self, channel: ChannelParams):
        self.channel = channel

    def decide(self, state: AoIState, slot: int) -> Decision:
        return mw_oma(state, self.channel)


class MemoizedPolicy(SchedulingPolicy):
    """
    Policy whose decision depends on the state only, memoized per process

    The LRU cache is rebuilt lazily after unpickling, so each worker keeps its own.
    """

    def __init__(self, channel: ChannelParams, cache_size: int | None = None):
        self.channel = channel
        self.cache_size = CONFIG.simulation.decision_cache_size if cache_size is None else cache_size
        self._cached = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cached"] = None
        return state

    def solve(self, state: AoIState) -> Decision:
        raise NotImplementedError

    def decide(self, state: AoIState, slot: int) -> Decision:
        if self._cached is None:
            if self.cache_size <= 0:
                logger.warning(f"[sim] decision cache disabled for {self.name}")
                self._cached = self.solve
            else:
                self._cached = functools.lru_cache(maxsize=self.cache_size)(self.solve)
        return self._cached(state)


class FixedKPolicy(MemoizedPolicy):
    name = "ap-noma-f-k"

    def __init__(self, channel: ChannelParams, k: int, cache_size: int | None = None):
        super().__init__(channel, cache_size)
        self.k = k

    def solve(self, state: AoIState) -> Decision:
        return fixed_k_noma(state, self.channel, self.k)


class AdaptivePolicy(MemoizedPolicy):
    """Adaptive NOMA/OMA over every subset size"""

    name = "ap-n-oma"

    def solve(self, state: AoIState) -> Decision:
        return adaptive_decision(state, self.channel)


class ExhaustivePolicy(MemoizedPolicy):
    name = "mw-n-oma"

    def __init__(
        self,
        channel: ChannelParams,
        grid_levels: int = 200,
        max_clients: int | None = None,
        cache_size: int | None = None,
    ):
        super().__init__(channel, cache_size)
        self.grid_levels = grid_levels
        self.max_clients = max_clients

    def solve(self, state: AoIState) -> Decision:
        return exhaustive_mw(state, self.channel, self.grid_levels, self.max_clients)


class RoundRobinPolicy(SchedulingPolicy):
    name = "round-robin"

    def __init__(self, channel: ChannelParams):
        self.channel = channel

    def decide(self, state: AoIState, slot: int) -> Decision:
        return round_robin(state, self.channel, slot)


def _solve_mdp(spec: PolicySpec, channel: ChannelParams, weights: tuple[float, ...]) -> tuple[MdpConfig, PolicyTable]:
    params = spec.params
    config = MdpConfig(
        channel=channel,
        weights=tuple(weights),
        levels=int(params.get("levels", 10)),
        delta_max=int(params.get("delta_max", 100)),
        span_tol=params.get("span_tol"),
        eliminate=bool(params.get("eliminate", True)),
        mode=ActionMode(params.get("mode", ActionMode.ADAPTIVE.value)),
    )
    return config, rvi_solve(config)


def resolve_policy(spec: PolicySpec, channel: ChannelParams, weights: tuple[float, ...]) -> SchedulingPolicy:
    """
    Build a ready-to-run policy

    Raises:
        PolicyResolutionError: unknown name, unknown parameter or a parameter the policy rejects
    """
    allowed = POLICY_PARAMS.get(spec.name)
    if allowed is None:
        raise PolicyResolutionError(f"unknown policy '{spec.name}', expected one of {sorted(POLICY_PARAMS)}")
    unknown = set(spec.params) - allowed
    if unknown:
        raise PolicyResolutionError(f"policy '{spec.name}' does not take parameters {sorted(unknown)}")
    if spec.name in TWO_CLIENT_POLICIES and channel.n_clients != 2:
        raise PolicyResolutionError(f"policy '{spec.name}' needs exactly two clients, got {channel.n_clients}")

    params = spec.params
    logger.info(f"[sim] Resolving policy {spec.display} at {channel.snr_db:.2f} dB")
    try:
        cache_size = None if params.get("cache_size") is None else int(params["cache_size"])
        if spec.name in ("mdp", "mdp-boundary"):
            config, table = _solve_mdp(spec, channel, weights)
            outages = OutageTable.from_channel(channel, config.levels, config.actions)
            if spec.name == "mdp":
                return MdpTablePolicy(table, channel, outages)
            return BoundaryPolicy(extract_boundaries(table), config.levels, channel, outages)
        if spec.name == "maxweight2":
            return MaxWeight2Policy(
                channel,
                (weights[0], weights[1]),
                int(params.get("levels", 10)),
                bool(params.get("eliminate", True)),
            )
        if spec.name == "mw-oma":
            return MwOmaPolicy(channel)
        if spec.name == "ap-noma-f-k":
            if "k" not in params:
                raise PolicyResolutionError("policy 'ap-noma-f-k' needs parameter k")
            k = int(params["k"])
            if not 1 <= k <= channel.n_clients:
                raise PolicyResolutionError(f"k must lie in [1, {channel.n_clients}], got {k}")
            return FixedKPolicy(channel, k, cache_size)
        if spec.name == "ap-n-oma":
            return AdaptivePolicy(channel, cache_size)
        if spec.name == "mw-n-oma":
            max_clients = params.get("max_clients")
            return ExhaustivePolicy(
                channel,
                grid_levels=int(params.get("grid_levels", 200)),
                max_clients=None if max_clients is None else int(max_clients),
                cache_size=cache_size,
            )
        return RoundRobinPolicy(channel)
    except PolicyResolutionError:
        raise
    except (AoISchedError, ValueError) as e:
        raise PolicyResolutionError(f"cannot resolve policy {spec.display}: {e}") from e
