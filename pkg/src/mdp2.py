"""
Exact two-client scheduling MDP

State: the pair of ages (Δ1, Δ2), truncated at delta_max (ages saturate).
Action: index a of the power split, a=0 is OMA to client 1 (near), a=L is OMA
to client 2 (far), anything in between is NOMA with α2 = a/L to the far client.

The average-cost problem is solved by relative value iteration on the
truncated grid. The finished PolicyTable can be checked for the switching
(monotone) structure and compressed to its decision boundaries.
"""
import bisect
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .channel import ChannelParams, noma2_outage_far, noma2_outage_near, oma_outage
from .config import CONFIG
from .exceptions import ConvergenceError, InvalidParameterError, SwitchingStructureError
from .logging_config import log_performance

logger = logging.getLogger(__name__)

State = tuple[int, int]


class ActionMode(Enum):
    """Which part of the action set a policy may use"""
    ADAPTIVE = "adaptive"
    OMA_ONLY = "oma"
    NOMA_ONLY = "noma"


@dataclass(frozen=True)
class TwoClientAction:
    """Power-split index a out of L levels"""
    index: int
    levels: int

    def __post_init__(self):
        if not 0 <= self.index <= self.levels:
            raise InvalidParameterError(f"action {self.index} outside [0, {self.levels}]")

    @property
    def is_oma(self) -> bool:
        return self.index in (0, self.levels)

    @property
    def alpha2(self) -> float:
        """Power fraction of the far client (client 2)"""
        return self.index / self.levels

    @property
    def alpha1(self) -> float:
        return 1.0 - self.alpha2

    @property
    def served(self) -> tuple[int, ...]:
        """Served clients (0-based) in SIC decoding order"""
        if self.index == 0:
            return (0,)
        if self.index == self.levels:
            return (1,)
        return (1, 0)

    def describe(self) -> str:
        if self.index == 0:
            return "OMA to client 1"
        if self.index == self.levels:
            return "OMA to client 2"
        return f"NOMA alpha1={self.alpha1:.3f} alpha2={self.alpha2:.3f}"


def lowest_noma_action(levels: int, target_rate: float) -> int:
    """Smallest split index with α2 > 1/2 and α2 strictly above (2^R−1)/2^R"""
    two_r = 2.0 ** target_rate
    return max(math.ceil(levels / 2) + 1, math.floor((two_r - 1.0) * levels / two_r) + 1)


def build_action_space(levels: int, target_rate: float, eliminate: bool = True) -> tuple[int, ...]:
    """
    Ordered action set for L power levels

    Without elimination every decodable NOMA split is kept. With elimination the
    splits below ⌊2^R·L/(2^R+1)⌋ are dropped: they have higher outage for both
    clients than that split.
    """
    if levels < 2:
        raise InvalidParameterError(f"power discretization level must be >= 2, got {levels}")
    low = lowest_noma_action(levels, target_rate)
    if eliminate:
        two_r = 2.0 ** target_rate
        low = max(low, math.floor(two_r * levels / (two_r + 1.0)))
    return tuple(sorted({0, levels, *range(low, levels)}))


def restrict_actions(actions: Iterable[int], levels: int, mode: ActionMode) -> tuple[int, ...]:
    """Keep only the OMA endpoints or only the NOMA splits"""
    actions = tuple(actions)
    if mode is ActionMode.OMA_ONLY:
        return tuple(a for a in actions if a in (0, levels))
    if mode is ActionMode.NOMA_ONLY:
        kept = tuple(a for a in actions if 0 < a < levels)
        if not kept:
            raise InvalidParameterError(f"no NOMA split available among {actions}")
        return kept
    return actions


class OutageProvider(Protocol):
    """Source of (P1, P2) outage pairs per action; unserved clients have outage 1"""

    def outage(self, action: int) -> tuple[float, float]: ...


@dataclass(frozen=True)
class OutageTable:
    """Outage pair (client 1, client 2) for every action of a two-client system"""
    levels: int
    pairs: dict[int, tuple[float, float]] = field(hash=False)

    def __post_init__(self):
        for action, pair in self.pairs.items():
            if any(not 0.0 <= p <= 1.0 for p in pair):
                raise InvalidParameterError(f"outage probabilities of action {action} outside [0, 1]: {pair}")

    def outage(self, action: int) -> tuple[float, float]:
        try:
            return self.pairs[action]
        except KeyError:
            raise InvalidParameterError(f"no outage entry for action {action}") from None

    @classmethod
    def from_channel(cls, channel: ChannelParams, levels: int, actions: Iterable[int]) -> "OutageTable":
        """Evaluate the closed-form outage models for each action"""
        if channel.n_clients != 2:
            raise InvalidParameterError(f"two-client model needs 2 distances, got {channel.n_clients}")
        d1, d2 = channel.distances
        if d1 >= d2:
            logger.warning(f"[mdp2] client 1 is expected to be the near client, got d1={d1} >= d2={d2}")
        pairs = {}
        for a in actions:
            if a == 0:
                pairs[a] = (oma_outage(d1, channel), 1.0)
            elif a == levels:
                pairs[a] = (1.0, oma_outage(d2, channel))
            else:
                alpha2 = a / levels
                pairs[a] = (noma2_outage_near(alpha2, d1, channel), noma2_outage_far(alpha2, d2, channel))
        return cls(levels=levels, pairs=pairs)

    @classmethod
    def synthetic(
        cls,
        levels: int,
        actions: Iterable[int],
        oma: tuple[float, float],
        noma: tuple[float, float] | dict[int, tuple[float, float]],
    ) -> "OutageTable":
        """Hand-built table: OMA outages (P1^O, P2^O) and NOMA pairs (one for all splits, or per split)"""
        pairs = {}
        for a in actions:
            if a == 0:
                pairs[a] = (oma[0], 1.0)
            elif a == levels:
                pairs[a] = (1.0, oma[1])
            else:
                pairs[a] = noma[a] if isinstance(noma, dict) else noma
        return cls(levels=levels, pairs=pairs)


def transition_kernel(
    state: State,
    action: TwoClientAction,
    outage: tuple[float, float],
    delta_max: int | None = None,
) -> dict[State, float]:
    """
    Next-state distribution of one slot

    Args:
        state: Current ages (Δ1, Δ2)
        action: Power-split action
        outage: (P1, P2) outage probabilities for this action
        delta_max: Ages saturate here when given

    Returns:
        Mapping next state -> probability mass
    """
    d1, d2 = state
    p1, p2 = outage
    up1, up2 = d1 + 1, d2 + 1
    if delta_max is not None:
        up1, up2 = min(up1, delta_max), min(up2, delta_max)

    if action.index == 0:
        return {(1, up2): 1.0 - p1, (up1, up2): p1}
    if action.index == action.levels:
        return {(up1, 1): 1.0 - p2, (up1, up2): p2}
    return {
        (1, 1): (1.0 - p1) * (1.0 - p2),
        (1, up2): (1.0 - p1) * p2,
        (up1, 1): p1 * (1.0 - p2),
        (up1, up2): p1 * p2,
    }


@dataclass
class MdpConfig:
    """
    Configuration of one two-client solve

    Numerical fields left as None take their value from the process configuration.
    """
    channel: ChannelParams | None = None
    weights: tuple[float, float] = (0.5, 0.5)
    levels: int = 10
    delta_max: int = 100
    span_tol: float | None = None
    max_iters: int | None = None
    aperiodicity: float | None = None
    eliminate: bool = True
    mode: ActionMode = ActionMode.ADAPTIVE
    reference_state: State = (1, 1)
    actions: tuple[int, ...] | None = None

    def __post_init__(self):
        solver = CONFIG.solver
        self.span_tol = solver.span_tol if self.span_tol is None else float(self.span_tol)
        self.max_iters = solver.max_iters if self.max_iters is None else int(self.max_iters)
        self.aperiodicity = solver.aperiodicity if self.aperiodicity is None else float(self.aperiodicity)
        self.weights = tuple(float(w) for w in self.weights)

        if self.delta_max < 2:
            raise InvalidParameterError(f"delta_max must be >= 2, got {self.delta_max}")
        if len(self.weights) != 2 or any(w < 0.0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise InvalidParameterError(f"weights must be two nonnegative numbers summing to 1, got {self.weights}")
        if not self.span_tol > 0.0:
            raise InvalidParameterError(f"span_tol must be > 0, got {self.span_tol}")
        if not 0.0 < self.aperiodicity <= 1.0:
            raise InvalidParameterError(f"aperiodicity must be in (0, 1], got {self.aperiodicity}")
        if any(not 1 <= x <= self.delta_max for x in self.reference_state):
            raise InvalidParameterError(f"reference state {self.reference_state} outside the truncated grid")
        if self.channel is not None and self.channel.n_clients != 2:
            raise InvalidParameterError("the two-client MDP needs exactly two client distances")
        if self.actions is None:
            rate = self.channel.target_rate if self.channel is not None else 1.0
            self.actions = restrict_actions(build_action_space(self.levels, rate, self.eliminate), self.levels, self.mode)
        else:
            self.actions = tuple(sorted(set(self.actions)))

    def echo(self) -> dict[str, str]:
        """Flat description written at the top of policy files"""
        echo = {
            "weights": " ".join(f"{w:g}" for w in self.weights),
            "levels": str(self.levels),
            "delta_max": str(self.delta_max),
            "mode": self.mode.value,
            "eliminate": str(self.eliminate).lower(),
            "span_tol": f"{self.span_tol:g}",
        }
        if self.channel is not None:
            echo.update({
                "distances": " ".join(f"{d:g}" for d in self.channel.distances),
                "path_loss_exp": f"{self.channel.path_loss_exp:g}",
                "target_rate": f"{self.channel.target_rate:g}",
                "snr_db": f"{self.channel.snr_db:.6g}",
            })
        return echo


@dataclass
class PolicyTable:
    """
    Solved two-client policy on the truncated grid

    actions[Δ1-1, Δ2-1] is the action index taken in state (Δ1, Δ2).
    """
    actions: np.ndarray
    action_set: tuple[int, ...]
    levels: int
    average_cost: float
    value_function: np.ndarray
    iterations: int = 0
    header: dict[str, str] = field(default_factory=dict)

    @property
    def delta_max(self) -> int:
        return self.actions.shape[0]

    def action(self, delta1: int, delta2: int) -> int:
        """Action of a state; ages beyond the truncation use the boundary row/column"""
        d = self.delta_max
        return int(self.actions[min(delta1, d) - 1, min(delta2, d) - 1])

    def realized_actions(self) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unique(self.actions))

    def to_text(self) -> str:
        lines = [f"# {key}={value}" for key, value in self.header.items()]
        lines += [
            f"# levels={self.levels}",
            f"# action_set={' '.join(str(a) for a in self.action_set)}",
            f"# average_cost={self.average_cost:.12g}",
            "delta1,delta2,action",
        ]
        rows, cols = np.indices(self.actions.shape)
        lines += [f"{i + 1},{j + 1},{a}" for i, j, a in zip(rows.ravel(), cols.ravel(), self.actions.ravel())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolicyTable":
        header = {}
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line == "delta1,delta2,action":
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
                continue
            entries.append(tuple(int(x) for x in line.split(",")))
        if not entries:
            raise InvalidParameterError("policy text holds no state rows")
        size = max(max(e[0], e[1]) for e in entries)
        actions = np.zeros((size, size), dtype=int)
        for d1, d2, a in entries:
            actions[d1 - 1, d2 - 1] = a
        levels = int(header.pop("levels"))
        action_set = tuple(int(a) for a in header.pop("action_set").split())
        average_cost = float(header.pop("average_cost"))
        return cls(
            actions=actions,
            action_set=action_set,
            levels=levels,
            average_cost=average_cost,
            value_function=np.zeros((size, size)),
            header=header,
        )


def _expected_next_values(h: np.ndarray, pair: tuple[float, float], inc: np.ndarray) -> np.ndarray:
    p1, p2 = pair
    s1, s2 = 1.0 - p1, 1.0 - p2
    return (
        s1 * s2 * h[0, 0]
        + s1 * p2 * h[0, inc][None, :]
        + p1 * s2 * h[inc, 0][:, None]
        + p1 * p2 * h[np.ix_(inc, inc)]
    )


def _q_values(h: np.ndarray, cost: np.ndarray, pairs: Sequence[tuple[float, float]], inc: np.ndarray) -> np.ndarray:
    return np.stack([cost + _expected_next_values(h, pair, inc) for pair in pairs])


def _stage_cost(weights: tuple[float, float], delta_max: int) -> np.ndarray:
    ages = np.arange(1, delta_max + 1, dtype=float)
    return weights[0] * ages[:, None] + weights[1] * ages[None, :]


@log_performance
def rvi_solve(config: MdpConfig, outage_provider: OutageProvider | None = None) -> PolicyTable:
    """
    Solve the truncated two-client MDP by relative value iteration

    The Bellman step is damped by config.aperiodicity (an aperiodicity transform
    with the same gain and greedy policy), so periodic chains such as the
    zero-outage alternating OMA policy still converge. Iteration stops once the
    span of T(h) − h falls below span_tol; the gain J* is the midpoint of that
    span and greedy ties go to the smallest action index.

    Args:
        config: Solve configuration
        outage_provider: Outage pairs per action; built from config.channel when omitted

    Returns:
        PolicyTable with greedy actions, J* and relative values h (h = 0 at the reference state)
    """
    if outage_provider is None:
        if config.channel is None:
            raise InvalidParameterError("either a channel or an outage provider is required")
        outage_provider = OutageTable.from_channel(config.channel, config.levels, config.actions)

    actions = np.asarray(config.actions, dtype=int)
    pairs = [outage_provider.outage(int(a)) for a in actions]
    d = config.delta_max
    inc = np.minimum(np.arange(1, d + 1), d - 1)
    cost = _stage_cost(config.weights, d)
    ref = (config.reference_state[0] - 1, config.reference_state[1] - 1)
    beta = config.aperiodicity

    logger.info(
        f"[rvi] Solving delta_max={d}, actions={tuple(int(a) for a in actions)}, "
        f"weights={config.weights}, span_tol={config.span_tol:g}"
    )

    h = np.zeros((d, d))
    span = math.inf
    for iteration in range(1, config.max_iters + 1):
        q = _q_values(h, cost, pairs, inc)
        th = q.min(axis=0)
        diff = th - h
        hi, lo = float(diff.max()), float(diff.min())
        span = hi - lo
        if span < config.span_tol:
            break
        if iteration % 1000 == 0:
            logger.debug(f"[rvi] iteration {iteration}: span={span:.3e}, gain~{(hi + lo) / 2:.6f}")
        h = (1.0 - beta) * h + beta * th
        h -= h[ref]
    else:
        raise ConvergenceError("relative value iteration did not converge", config.max_iters, span)

    average_cost = (hi + lo) / 2.0
    policy = actions[q.argmin(axis=0)]
    logger.info(f"[rvi] Converged after {iteration} iterations: J*={average_cost:.6f}, span={span:.2e}")

    return PolicyTable(
        actions=policy,
        action_set=tuple(int(a) for a in actions),
        levels=config.levels,
        average_cost=average_cost,
        value_function=h,
        iterations=iteration,
        header=config.echo(),
    )


def state_q_values(
    state: State,
    value_function: np.ndarray,
    outage_provider: OutageProvider,
    config: MdpConfig,
) -> dict[int, float]:
    """Right-hand side of the optimality equation at one state, per action"""
    d = config.delta_max
    i, j = min(state[0], d) - 1, min(state[1], d) - 1
    up_i, up_j = min(i + 1, d - 1), min(j + 1, d - 1)
    h = value_function
    # same operation order as the vectorized Bellman step, so ties resolve identically
    cost = config.weights[0] * float(i + 1) + config.weights[1] * float(j + 1)
    q = {}
    for a in config.actions:
        p1, p2 = outage_provider.outage(a)
        s1, s2 = 1.0 - p1, 1.0 - p2
        expected = s1 * s2 * h[0, 0] + s1 * p2 * h[0, up_j] + p1 * s2 * h[up_i, 0] + p1 * p2 * h[up_i, up_j]
        q[a] = cost + expected
    return q


def greedy_action(
    state: State,
    value_function: np.ndarray,
    outage_provider: OutageProvider,
    config: MdpConfig,
) -> int:
    """Table-free greedy action at one state, smallest index on ties"""
    d = config.delta_max
    state = (min(state[0], d), min(state[1], d))
    q = state_q_values(state, value_function, outage_provider, config)
    best = min(q.values())
    return min(a for a, value in q.items() if value == best)


@dataclass
class SwitchingReport:
    """Result of the switching-structure check"""
    passed: bool
    violations: list[tuple[State, State]]


def verify_switching(policy: PolicyTable) -> SwitchingReport:
    """
    Check the switching structure of a policy

    The action must be nondecreasing in Δ2 at fixed Δ1 and nonincreasing in Δ1 at
    fixed Δ2. Each violation is reported as the adjacent pair (state, next state).
    """
    table = policy.actions
    violations: list[tuple[State, State]] = []
    for i, j in zip(*np.nonzero(table[:, 1:] < table[:, :-1])):
        violations.append(((int(i) + 1, int(j) + 1), (int(i) + 1, int(j) + 2)))
    for i, j in zip(*np.nonzero(table[1:, :] > table[:-1, :])):
        violations.append(((int(i) + 1, int(j) + 1), (int(i) + 2, int(j) + 1)))
    violations.sort()
    if violations:
        logger.info(f"[mdp2] Switching check failed with {len(violations)} violating pairs")
    return SwitchingReport(passed=not violations, violations=violations)


@dataclass(frozen=True)
class RowBoundary:
    """Switching thresholds of one Δ1 row: start action, then (Δ2, new action) increments"""
    delta1: int
    start_action: int
    thresholds: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SwitchingBoundaries:
    """Compact representation of a switching-type policy"""
    delta_max: int
    rows: tuple[RowBoundary, ...]

    @property
    def is_empty(self) -> bool:
        """True when no row ever switches action"""
        return all(not row.thresholds for row in self.rows)

    def action(self, delta1: int, delta2: int) -> int:
        row = self.rows[min(delta1, self.delta_max) - 1]
        delta2 = min(delta2, self.delta_max)
        pos = bisect.bisect_right([t for t, _ in row.thresholds], delta2)
        return row.start_action if pos == 0 else row.thresholds[pos - 1][1]

    def reconstruct(self) -> np.ndarray:
        """Full action table rebuilt from the boundaries"""
        table = np.empty((self.delta_max, self.delta_max), dtype=int)
        for row in self.rows:
            table[row.delta1 - 1, :] = row.start_action
            for threshold, action in row.thresholds:
                table[row.delta1 - 1, threshold - 1:] = action
        return table

    def to_text(self) -> str:
        lines = [f"# delta_max={self.delta_max}", "delta1,start_action,thresholds"]
        for row in self.rows:
            thresholds = " ".join(f"{t}:{a}" for t, a in row.thresholds)
            lines.append(f"{row.delta1},{row.start_action},{thresholds}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SwitchingBoundaries":
        delta_max = None
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("delta1,"):
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "delta_max":
                    delta_max = int(value)
                continue
            delta1, start, thresholds = line.split(",", 2)
            pairs = tuple(
                (int(t), int(a)) for t, a in (item.split(":") for item in thresholds.split())
            )
            rows.append(RowBoundary(int(delta1), int(start), pairs))
        if delta_max is None:
            delta_max = len(rows)
        return cls(delta_max=delta_max, rows=tuple(rows))


def extract_boundaries(policy: PolicyTable) -> SwitchingBoundaries:
    """
    Compress a switching-type policy to its per-row thresholds

    Raises:
        SwitchingStructureError: the policy is not monotone, so boundaries are ill-defined
    """
    report = verify_switching(policy)
    if not report.passed:
        raise SwitchingStructureError("policy is not of switching type", report.violations)

    rows = []
    for i, row in enumerate(policy.actions):
        change = np.nonzero(row[1:] != row[:-1])[0]
        thresholds = tuple((int(j) + 2, int(row[j + 1])) for j in change)
        rows.append(RowBoundary(delta1=i + 1, start_action=int(row[0]), thresholds=thresholds))
    return SwitchingBoundaries(delta_max=policy.delta_max, rows=tuple(rows))
