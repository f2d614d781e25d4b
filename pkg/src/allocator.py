"""
Multi-client NOMA power allocation

For a served set in SIC decoding order, the expected age drop is a sum of
terms c_k·exp(−s_k/p̂_k) in the linearizing power variables p̂ (see
channel.to_hat_powers). Each term is replaced by its tightest concave upper
envelope, and the resulting concave program over the ordered weighted simplex

    max Σ_k g̃(p̂_k; c_k, s_k)
    s.t. p̂_1 ≥ p̂_2 ≥ … ≥ p̂_K ≥ 0,  Σ_k (r+1)^{k−1} p̂_k ≤ p̄

is solved by projected-gradient ascent. Candidates over all served subsets are
then ranked by the exact (non-envelope) objective.
"""
import itertools
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .channel import ChannelParams, PowerAllocation, decoding_order
from .config import CONFIG
from .exceptions import CombinatorialGuardError, ConvergenceError, InvalidParameterError

if TYPE_CHECKING:
    from .scheduler import AoIState

logger = logging.getLogger(__name__)

_INV_E = math.exp(-1.0)
_GAP_FACTOR = math.exp(-2.0)
# p̂ at or below this fraction of the budget counts as unserved
_SERVED_FLOOR = 1e-12
# brute-force grids larger than this many points are refused
_MAX_GRID_POINTS = 20_000_000
# relative value change treated as no progress, and how many such iterations end the ascent
_STALL_RTOL = 1e-13
_STALL_ITERS = 10


def g_value(hat_power: float, c: float, s: float) -> float:
    """Exact reward term c·exp(−s/p̂), zero at p̂ = 0"""
    if hat_power <= 0.0:
        return 0.0
    return c * math.exp(-s / hat_power)


def g_tilde(hat_power: float, c: float, s: float) -> float:
    """Concave envelope of g_value: the tangent line from the origin below s, g_value from s on"""
    if hat_power < s:
        return c * _INV_E / s * max(hat_power, 0.0)
    return c * math.exp(-s / hat_power)


def _g_tilde_slope(hat_power: float, c: float, s: float) -> float:
    if hat_power < s:
        return c * _INV_E / s
    return c * math.exp(-s / hat_power) * s / (hat_power * hat_power)


@dataclass(frozen=True)
class AllocInstance:
    """
    One concave allocation problem

    Attributes:
        served: Client indices in decoding order
        coefficients: c_k = w_k·Δ_k
        scales: s_k = d_k^τ·r·σ², nonincreasing along the decoding order
        budget: Power budget p̄
        rate_factor: r = 2^R − 1
    """
    served: tuple[int, ...]
    coefficients: tuple[float, ...]
    scales: tuple[float, ...]
    budget: float
    rate_factor: float

    def __post_init__(self):
        if not (len(self.served) == len(self.coefficients) == len(self.scales)):
            raise InvalidParameterError("served, coefficients and scales must have equal length")
        if any(c < 0.0 or not math.isfinite(c) for c in self.coefficients):
            raise InvalidParameterError(f"coefficients must be finite and >= 0: {self.coefficients}")
        if any(s <= 0.0 or not math.isfinite(s) for s in self.scales):
            raise InvalidParameterError(f"scales must be finite and > 0: {self.scales}")
        if any(later > earlier for earlier, later in zip(self.scales, self.scales[1:])):
            raise InvalidParameterError(f"scales must be nonincreasing in decoding order: {self.scales}")
        if not self.budget > 0.0:
            raise InvalidParameterError(f"budget must be > 0, got {self.budget}")
        if self.rate_factor < 0.0:
            raise InvalidParameterError(f"rate factor must be >= 0, got {self.rate_factor}")

    @classmethod
    def for_clients(
        cls,
        clients: Iterable[int],
        ages: Sequence[int],
        weights: Sequence[float],
        channel: ChannelParams,
    ) -> "AllocInstance":
        """Instance for a client subset, put in decoding order"""
        served = decoding_order(tuple(clients), channel)
        return cls(
            served=served,
            coefficients=tuple(float(weights[i]) * float(ages[i]) for i in served),
            scales=tuple(channel.outage_scale(i) for i in served),
            budget=channel.power_budget,
            rate_factor=channel.rate_factor,
        )

    @property
    def k(self) -> int:
        return len(self.served)

    @property
    def budget_weights(self) -> list[float]:
        """(r+1)^{k−1} for k = 1..K"""
        return [(self.rate_factor + 1.0) ** k for k in range(self.k)]


@dataclass
class AllocSolution:
    """Solution of one envelope problem, with the exact objective and the gap certificate"""
    hat_powers: np.ndarray
    envelope_value: float
    true_value: float
    gap_certificate: float
    residual: float
    iterations: int = 0

    @property
    def envelope_gap(self) -> float:
        return self.envelope_value - self.true_value


def gap_bound(inst: AllocInstance) -> float:
    """Worst-case envelope gap e^{−2}·Σc_k"""
    return _GAP_FACTOR * sum(inst.coefficients)


def _true_objective_rows(points: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    # each client must decode every earlier message, so the binding p̂ is the prefix minimum
    prefix = np.minimum.accumulate(points, axis=1)
    positive = prefix > 0.0
    safe = np.where(positive, prefix, 1.0)
    return np.where(positive, c * np.exp(-s / safe), 0.0).sum(axis=1)


def evaluate_true_objective(hat_powers: Sequence[float], inst: AllocInstance) -> float:
    """
    Exact expected reward Σ_k c_k·exp(−s_k·max_{t≤k} 1/p̂_t)

    Terms whose decoding prefix holds a non-positive p̂ contribute nothing.
    """
    hat = np.asarray(hat_powers, dtype=float)
    if hat.size != inst.k:
        raise InvalidParameterError(f"expected {inst.k} powers, got {hat.size}")
    if not hat.size:
        return 0.0
    c = np.asarray(inst.coefficients)
    s = np.asarray(inst.scales)
    return float(_true_objective_rows(hat[None, :], c, s)[0])


def _pava_decreasing(values: Sequence[float]) -> tuple[list[float], list[tuple[int, int, float]]]:
    """Least-squares nonincreasing fit; returns the fit and its pools as (start, stop, mean)"""
    sums: list[float] = []
    counts: list[int] = []
    for v in values:
        sums.append(v)
        counts.append(1)
        while len(sums) > 1 and sums[-2] * counts[-1] < sums[-1] * counts[-2]:
            tail_sum, tail_count = sums.pop(), counts.pop()
            sums[-1] += tail_sum
            counts[-1] += tail_count
    fit: list[float] = []
    pools = []
    start = 0
    for total, count in zip(sums, counts):
        mean = total / count
        fit.extend([mean] * count)
        pools.append((start, start + count, mean))
        start += count
    return fit, pools


def _shifted_projection(y: Sequence[float], a: Sequence[float], lam: float) -> tuple[list[float], float, float]:
    """Projection of y − λa on the nonincreasing nonnegative cone, its budget a·x and −d(a·x)/dλ"""
    fit, pools = _pava_decreasing([yk - lam * ak for yk, ak in zip(y, a)])
    x = [max(v, 0.0) for v in fit]
    spent = sum(ak * xk for ak, xk in zip(a, x))
    slope = 0.0
    for start, stop, mean in pools:
        if mean > 0.0:
            pooled = sum(a[start:stop])
            slope += pooled * pooled / (stop - start)
    return x, spent, slope


def _project(y: Sequence[float], a: Sequence[float], budget: float) -> list[float]:
    x, spent, slope = _shifted_projection(y, a, 0.0)
    if spent <= budget:
        return x

    # a·x(λ) is continuous, nonincreasing and piecewise linear in λ; it vanishes at hi
    lo, hi = 0.0, max(yk / ak for yk, ak in zip(y, a))
    x_hi = [0.0] * len(x)
    lam = 0.0
    for _ in range(200):
        if spent > budget:
            lo = lam
        else:
            hi, x_hi = lam, x
            if spent >= budget * (1.0 - 1e-14):
                return x
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
        step = lam + (spent - budget) / slope if slope > 0.0 else math.nan
        lam = step if lo < step < hi else 0.5 * (lo + hi)
        x, spent, slope = _shifted_projection(y, a, lam)
    return x_hi


def project_ordered_budget(y: Sequence[float], a: Sequence[float], budget: float) -> np.ndarray:
    """
    Euclidean projection onto {x_1 ≥ … ≥ x_K ≥ 0, Σ a_k x_k ≤ budget}

    The minimizer is x(λ) = max(PAVA(y − λa), 0) for the smallest λ ≥ 0 that
    meets the budget; λ is found by Newton steps on the current pool structure,
    safeguarded by bisection.

    Args:
        y: Point to project
        a: Positive budget weights
        budget: Right-hand side of the budget constraint, > 0
    """
    y = [float(v) for v in y]
    a = [float(v) for v in a]
    if len(y) != len(a):
        raise InvalidParameterError("point and weights must have equal length")
    if any(v <= 0.0 for v in a) or not budget > 0.0:
        raise InvalidParameterError("budget weights and budget must be positive")
    return np.asarray(_project(y, a, float(budget)))


def solve_problem8(
    inst: AllocInstance,
    residual_tol: float | None = None,
    max_iters: int | None = None,
) -> AllocSolution:
    """
    Maximize the concave envelope objective over the ordered weighted simplex

    Projected-gradient ascent with an adaptive step and Armijo backtracking, started
    from p̂_k = p̄/(K(r+1)^{k−1}). Stops when the scaled fixed-point residual
    ‖P(p̂ + ηg) − p̂‖∞/p̄ with η = p̄/‖g‖∞ is below residual_tol, or when the
    envelope value has stopped changing at machine precision while the residual
    is below √residual_tol. Near the maximizer the objective is flat to second
    order, so iterates closer than about √ε·p̄ cannot be told apart by value.

    Raises:
        ConvergenceError: no progress with the residual above √residual_tol, or
            residual still above tolerance after max_iters iterations
    """
    tol = CONFIG.allocator.residual_tol if residual_tol is None else residual_tol
    cap = CONFIG.allocator.max_iters if max_iters is None else max_iters
    stall_ceiling = max(math.sqrt(tol), tol)
    k = inst.k
    c, s = inst.coefficients, inst.scales
    a = inst.budget_weights
    budget = inst.budget

    if k == 0 or all(ci == 0.0 for ci in c):
        zeros = np.zeros(k)
        return AllocSolution(zeros, 0.0, 0.0, gap_bound(inst), 0.0, 0)

    def envelope(x: Sequence[float]) -> float:
        return sum(g_tilde(xk, ck, sk) for xk, ck, sk in zip(x, c, s))

    x = [budget / (k * ak) for ak in a]
    value = envelope(x)
    step = None
    residual = math.inf
    stalled = 0
    for iteration in range(1, cap + 1):
        grad = [_g_tilde_slope(xk, ck, sk) for xk, ck, sk in zip(x, c, s)]
        eta = budget / max(grad)
        full_step = _project([xk + eta * gk for xk, gk in zip(x, grad)], a, budget)
        residual = max(abs(pk - xk) for pk, xk in zip(full_step, x)) / budget
        if residual <= tol:
            break
        if stalled >= _STALL_ITERS:
            if residual <= stall_ceiling:
                logger.debug(f"[allocator] value flat at machine precision, stopping at residual {residual:.2e}")
                break
            raise ConvergenceError("projected gradient stalled above the residual tolerance", iteration, residual)

        t = eta if step is None else min(2.0 * step, eta)
        while True:
            trial = full_step if t == eta else _project([xk + t * gk for xk, gk in zip(x, grad)], a, budget)
            move = [tk - xk for tk, xk in zip(trial, x)]
            trial_value = envelope(trial)
            model = value + sum(gk * mk for gk, mk in zip(grad, move)) - sum(mk * mk for mk in move) / (2.0 * t)
            if trial_value >= model - 1e-15 * abs(value) or t < 1e-18 * eta:
                break
            t *= 0.5
        step = t
        stalled = stalled + 1 if trial_value - value <= _STALL_RTOL * abs(value) else 0
        if trial_value >= value:
            x, value = trial, trial_value
    else:
        raise ConvergenceError("projected gradient did not reach the residual tolerance", cap, residual)

    hat = np.asarray(x)
    true_value = evaluate_true_objective(hat, inst)
    logger.debug(
        f"[allocator] served={inst.served} iterations={iteration} envelope={value:.6f} "
        f"true={true_value:.6f} residual={residual:.2e}"
    )
    return AllocSolution(
        hat_powers=hat,
        envelope_value=value,
        true_value=true_value,
        gap_certificate=gap_bound(inst),
        residual=residual,
        iterations=iteration,
    )


@dataclass
class BruteForceResult:
    """Best grid point of the exact objective"""
    value: float
    hat_powers: np.ndarray
    points: int


def brute_force_problem7(
    inst: AllocInstance,
    grid_step: float | None = None,
    ordered: bool = True,
) -> BruteForceResult:
    """
    Grid maximization of the exact objective over the feasible set

    The grid is p̄·i/n for i = 0..n with n = round(p̄/grid_step), so the budget
    endpoint is always on it and grids with n dividing n' nest. With
    ordered=False the ordering constraint is dropped and the prefix-max form
    of the objective applies.

    The objective is nondecreasing in the last decoded p̂ and the other terms do
    not depend on it, so only the first K−1 coordinates are enumerated and the
    last takes its largest feasible grid value. The result equals the full grid
    search at a factor n fewer evaluations.

    Args:
        inst: Instance with K ≤ 3
        grid_step: Absolute grid step; default 1e−3·p̄
        ordered: Keep the nonincreasing constraint on p̂
    """
    k = inst.k
    if k > 3:
        raise CombinatorialGuardError(f"brute-force oracle supports K <= 3, got K={k}")
    budget = inst.budget
    if grid_step is None:
        grid_step = budget * 1e-3
    if not grid_step > 0.0:
        raise InvalidParameterError(f"grid step must be > 0, got {grid_step}")
    if k == 0:
        return BruteForceResult(0.0, np.zeros(0), 1)

    n = max(1, round(budget / grid_step))
    if (n + 1) ** (k - 1) > _MAX_GRID_POINTS:
        raise CombinatorialGuardError(f"grid with {(n + 1) ** (k - 1)} leading points exceeds {_MAX_GRID_POINTS}")
    weights = np.asarray(inst.budget_weights)

    # grid indices of the leading coordinates
    if k > 1:
        head = np.stack(np.meshgrid(*[np.arange(n + 1)] * (k - 1), indexing="ij"), axis=-1).reshape(-1, k - 1)
    else:
        head = np.zeros((1, 0), dtype=int)
    if ordered and k > 2:
        head = head[np.all(np.diff(head, axis=1) <= 0, axis=1)]

    spare = n * (1.0 + 1e-12) - head @ weights[:-1]
    last = np.floor(spare / weights[-1])
    if ordered and k > 1:
        last = np.minimum(last, head[:, -1])
    feasible = last >= 0.0
    points = budget * np.column_stack((head[feasible], last[feasible])) / n

    values = _true_objective_rows(points, np.asarray(inst.coefficients), np.asarray(inst.scales))
    best = int(np.argmax(values))
    return BruteForceResult(value=float(values[best]), hat_powers=points[best].copy(), points=len(points))


@dataclass
class Candidate:
    """Best allocation found for one served subset"""
    subset: tuple[int, ...]
    solution: AllocSolution
    allocation: PowerAllocation

    @property
    def objective(self) -> float:
        return self.solution.true_value

    @property
    def served(self) -> tuple[int, ...]:
        return self.allocation.served


@dataclass
class EnumerationResult:
    """Winning candidate plus the best candidate for every subset size"""
    best: Candidate
    per_k: dict[int, Candidate] = field(default_factory=dict)

    @property
    def k_star(self) -> int:
        """Number of clients actually served by the winner"""
        return self.best.allocation.k

    @property
    def served(self) -> tuple[int, ...]:
        return self.best.served

    @property
    def objective(self) -> float:
        return self.best.objective


def _to_candidate(subset: tuple[int, ...], solution: AllocSolution, channel: ChannelParams) -> Candidate:
    hat = solution.hat_powers
    # trailing zero powers (p̂ is nonincreasing) are clients that end up unserved
    kept = int(np.count_nonzero(hat > _SERVED_FLOOR * channel.power_budget))
    allocation = PowerAllocation.from_hat(subset[:kept], hat[:kept], channel.n_clients, channel.rate_factor)
    return Candidate(subset=subset, solution=solution, allocation=allocation)


def enumerate_allocate(
    aoi: "AoIState",
    channel: ChannelParams,
    sizes: Iterable[int] | None = None,
    guard: int | None = None,
) -> EnumerationResult:
    """
    Solve the envelope problem for every served subset and keep the best by exact objective

    Subset sizes are scanned in ascending order and subsets lexicographically;
    a candidate replaces the incumbent only on a strict improvement, so smaller
    K wins ties.

    Args:
        aoi: Current ages and weights of all clients
        channel: Channel parameters (N clients)
        sizes: Subset sizes to consider, all of 1..N by default
        guard: Largest N accepted, CONFIG.allocator.enumeration_guard by default

    Raises:
        CombinatorialGuardError: N above the guard
    """
    n = channel.n_clients
    guard = CONFIG.allocator.enumeration_guard if guard is None else guard
    if n > guard:
        raise CombinatorialGuardError(
            f"subset enumeration over N={n} clients needs {2 ** n - 1} convex solves per slot; guard is N <= {guard}"
        )
    if len(aoi.ages) != n:
        raise InvalidParameterError(f"state has {len(aoi.ages)} ages but the channel has {n} clients")
    sizes = sorted(set(range(1, n + 1) if sizes is None else sizes))
    if not sizes or sizes[0] < 1 or sizes[-1] > n:
        raise InvalidParameterError(f"subset sizes must lie in [1, {n}], got {sizes}")

    best: Candidate | None = None
    per_k: dict[int, Candidate] = {}
    for size in sizes:
        for clients in itertools.combinations(range(n), size):
            inst = AllocInstance.for_clients(clients, aoi.ages, aoi.weights, channel)
            candidate = _to_candidate(inst.served, solve_problem8(inst), channel)
            incumbent = per_k.get(size)
            if incumbent is None or candidate.objective > incumbent.objective:
                per_k[size] = candidate
            if best is None or candidate.objective > best.objective:
                best = candidate

    logger.debug(
        f"[allocator] ages={tuple(aoi.ages)} best served={best.served} objective={best.objective:.6f}"
    )
    return EnumerationResult(best=best, per_k=per_k)
