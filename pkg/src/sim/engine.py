"""
Slotted Monte Carlo engine

Each slot the policy decides on the pre-decision ages, every client succeeds
independently with its exact delivery probability, and ages evolve as
Δ_i ← 1 on success and Δ_i ← Δ_i + 1 otherwise. The weighted time-average age
is estimated over slots warmup+1 … horizon of each replication.
"""
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from ..channel import ChannelParams
from ..config import CONFIG
from ..exceptions import InvalidParameterError, SimulationError
from ..logging_config import log_performance
from ..scheduler import AoIState, Decision
from .policies import PolicySpec, SchedulingPolicy, resolve_policy

logger = logging.getLogger(__name__)


@dataclass
class SimConfig:
    """
    One simulation setup

    Attributes:
        channel: Channel parameters (N clients)
        policy: Policy identifier and parameters
        horizon: Slots per replication
        weights: Client weights, uniform when omitted
        warmup: Slots left out of the average, CONFIG warmup fraction of the horizon when omitted
        seed: Root seed; replications get spawned child streams
        replications: Independent runs
        initial_ages: Ages at slot 1, all 1 when omitted
        workers: Worker processes, CONFIG.simulation.workers when omitted
        record_trace: Keep the per-slot trace of the first replication
    """
    channel: ChannelParams
    policy: PolicySpec
    horizon: int
    weights: tuple[float, ...] | None = None
    warmup: int | None = None
    seed: int = 0
    replications: int = 1
    initial_ages: tuple[int, ...] | None = None
    workers: int | None = None
    record_trace: bool = False

    def __post_init__(self):
        n = self.channel.n_clients
        if self.weights is None:
            self.weights = (1.0 / n,) * n
        self.weights = tuple(float(w) for w in self.weights)
        if self.initial_ages is None:
            self.initial_ages = (1,) * n
        self.initial_ages = tuple(int(a) for a in self.initial_ages)
        if self.warmup is None:
            self.warmup = int(self.horizon * CONFIG.simulation.warmup_fraction)
        if self.workers is None:
            self.workers = CONFIG.simulation.workers

        if len(self.weights) != n or len(self.initial_ages) != n:
            raise InvalidParameterError(f"weights and initial ages need {n} entries")
        if not self.horizon > self.warmup >= 0:
            raise InvalidParameterError(f"need horizon > warmup >= 0, got horizon={self.horizon}, warmup={self.warmup}")
        if self.replications < 1:
            raise InvalidParameterError(f"replications must be >= 1, got {self.replications}")
        if self.seed < 0:
            raise InvalidParameterError(f"seed must be >= 0, got {self.seed}")
        # validates weights and ages
        AoIState(self.initial_ages, self.weights)

    @property
    def averaged_slots(self) -> int:
        return self.horizon - self.warmup


@dataclass
class SimResult:
    """Estimated weighted average age with its across-replication standard error"""
    weighted_avg_aoi: float
    per_client_avg_aoi: np.ndarray
    stderr: float
    replication_values: list[float] = field(default_factory=list)
    slots: int = 0
    trace: list[str] | None = None


def step_aoi(ages: Sequence[int], successes: Sequence[bool]) -> tuple[int, ...]:
    """One-slot age update: reset to 1 on delivery, otherwise grow by 1"""
    if len(ages) != len(successes):
        raise InvalidParameterError(f"{len(ages)} ages but {len(successes)} outcomes")
    return tuple(1 if ok else age + 1 for age, ok in zip(ages, successes))


class UniformStream:
    """Per-slot uniform draws of one replication, generated in fixed-size blocks"""

    def __init__(self, rng: np.random.Generator, width: int, chunk: int | None = None):
        self.rng = rng
        self.width = width
        self.chunk = chunk or CONFIG.simulation.rng_chunk
        self._block: list[list[float]] = []
        self._pos = 0

    def next(self) -> list[float]:
        if self._pos == len(self._block):
            self._block = self.rng.random((self.chunk, self.width)).tolist()
            self._pos = 0
        row = self._block[self._pos]
        self._pos += 1
        return row


def sample_outcomes(decision: Decision, rng: np.random.Generator | UniformStream) -> tuple[bool, ...]:
    """Independent delivery draws; unserved clients (probability 0) never succeed"""
    success = decision.success
    draws = rng.next() if isinstance(rng, UniformStream) else rng.random(len(success)).tolist()
    return tuple(u < p for u, p in zip(draws, success))


def _trace_line(slot: int, ages: Sequence[int], decision: Decision, outcomes: Sequence[bool]) -> str:
    mask = "".join("1" if ok else "0" for ok in outcomes)
    return f"{slot},{','.join(str(a) for a in ages)},{decision.encode()},{mask}"


def _run_replication(args) -> tuple[np.ndarray, list[str] | None]:
    config, policy, seed_seq, record_trace = args
    rng = np.random.default_rng(seed_seq)
    stream = UniformStream(rng, config.channel.n_clients)
    ages = config.initial_ages
    totals = np.zeros(config.channel.n_clients)
    trace = [] if record_trace else None

    for slot in range(1, config.horizon + 1):
        if slot > config.warmup:
            totals += ages
        state = AoIState(ages, config.weights)
        try:
            decision = policy.decide(state, slot - 1)
        except Exception as e:
            raise SimulationError(f"policy {config.policy.display} failed: {e}", slot, ages) from e
        outcomes = sample_outcomes(decision, stream)
        if trace is not None:
            trace.append(_trace_line(slot, ages, decision, outcomes))
        ages = step_aoi(ages, outcomes)

    return totals / config.averaged_slots, trace


@log_performance
def run(config: SimConfig, policy: SchedulingPolicy | None = None) -> SimResult:
    """
    Simulate all replications of one configuration

    Results depend only on (seed, config): each replication draws from its own
    child of SeedSequence(seed), whatever the number of worker processes.

    Args:
        config: Simulation setup
        policy: Already resolved policy, resolved from config.policy when omitted

    Raises:
        SimulationError: the policy failed mid-run
    """
    if policy is None:
        policy = resolve_policy(config.policy, config.channel, config.weights)
    seeds = np.random.SeedSequence(config.seed).spawn(config.replications)
    tasks = [(config, policy, seed, config.record_trace and i == 0) for i, seed in enumerate(seeds)]

    workers = max(1, min(config.workers, config.replications))
    logger.info(
        f"[sim] {config.policy.display}: {config.replications} x {config.horizon} slots "
        f"at {config.channel.snr_db:.2f} dB on {workers} worker(s)"
    )
    if workers == 1:
        outputs = [_run_replication(task) for task in tasks]
    else:
        with Pool(processes=workers) as pool:
            outputs = pool.map(_run_replication, tasks)

    weights = np.asarray(config.weights)
    per_client = np.stack([averages for averages, _ in outputs])
    values = per_client @ weights
    stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    result = SimResult(
        weighted_avg_aoi=float(values.mean()),
        per_client_avg_aoi=per_client.mean(axis=0),
        stderr=stderr,
        replication_values=[float(v) for v in values],
        slots=config.averaged_slots,
        trace=outputs[0][1],
    )
    logger.info(f"[sim] {config.policy.display}: weighted average AoI {result.weighted_avg_aoi:.6f} ± {stderr:.2e}")
    return result
