"""
Closed-form outage models for the downlink

Covers OMA, two-user NOMA with SIC at the near client, and K-user SIC NOMA,
together with the change of power variables that turns the K-user SIC
decodability conditions into positivity constraints and the power budget into
a weighted simplex.

All physical quantities are linear scale. Decisions only use statistical CSI,
so every function here is a pure function of the parameter record.
"""
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .exceptions import ConstraintViolationError, InvalidParameterError

logger = logging.getLogger(__name__)


def db_to_linear(value_db: float) -> float:
    """Convert a dB quantity to linear scale"""
    if not math.isfinite(value_db):
        raise InvalidParameterError(f"SNR must be finite, got {value_db}")
    return 10.0 ** (value_db / 10.0)


def _require_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidParameterError(f"{name} must be finite and > 0, got {value}")
    return value


@dataclass(frozen=True)
class ChannelParams:
    """
    Physical setup shared by every client

    Attributes:
        distances: Normalized distance d_i of each client
        power_budget: Total transmit power p̄ (normalized watts)
        path_loss_exp: Path-loss exponent τ
        noise_power: Noise power σ² (normalized watts)
        target_rate: Common target rate R in bits/s/Hz
    """
    distances: tuple[float, ...]
    power_budget: float
    path_loss_exp: float = 2.0
    noise_power: float = 1.0
    target_rate: float = 1.0

    def __post_init__(self):
        distances = tuple(_require_positive("distance", d) for d in self.distances)
        if not distances:
            raise InvalidParameterError("at least one client distance is required")
        object.__setattr__(self, "distances", distances)
        object.__setattr__(self, "power_budget", _require_positive("power_budget", self.power_budget))
        object.__setattr__(self, "path_loss_exp", _require_positive("path_loss_exp", self.path_loss_exp))
        object.__setattr__(self, "noise_power", _require_positive("noise_power", self.noise_power))
        object.__setattr__(self, "target_rate", _require_positive("target_rate", self.target_rate))

    @classmethod
    def from_snr_db(
        cls,
        distances: Sequence[float],
        snr_db: float,
        path_loss_exp: float = 2.0,
        target_rate: float = 1.0,
        noise_power: float = 1.0,
    ) -> "ChannelParams":
        """Build parameters from a transmission SNR given in dB"""
        return cls(
            distances=tuple(distances),
            power_budget=db_to_linear(snr_db) * noise_power,
            path_loss_exp=path_loss_exp,
            noise_power=noise_power,
            target_rate=target_rate,
        )

    @property
    def n_clients(self) -> int:
        return len(self.distances)

    @property
    def snr(self) -> float:
        """Transmission SNR ρ = p̄/σ² (linear)"""
        return self.power_budget / self.noise_power

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr)

    @property
    def rate_factor(self) -> float:
        """r = 2^R − 1"""
        return math.expm1(self.target_rate * math.log(2.0))

    def path_gain(self, client: int) -> float:
        """d_i^τ of one client"""
        return self.distances[client] ** self.path_loss_exp

    def outage_scale(self, client: int) -> float:
        """d_i^τ·r·σ², the power at which the K-user reward term is tangent to its envelope"""
        return self.path_gain(client) * self.rate_factor * self.noise_power

    def with_snr_db(self, snr_db: float) -> "ChannelParams":
        return replace(self, power_budget=db_to_linear(snr_db) * self.noise_power)


def decoding_order(clients: Sequence[int], params: ChannelParams) -> tuple[int, ...]:
    """SIC decoding order of a served set: farthest client first, ties by lower index"""
    return tuple(sorted(clients, key=lambda i: (-params.distances[i], i)))


def _outage_from_exponent(exponent: float) -> float:
    # 1 − exp(−x) without cancellation for small x
    return -math.expm1(-exponent)


def oma_outage(d: float, params: ChannelParams) -> float:
    """
    Outage probability of a client served alone at full power

    Args:
        d: Normalized distance of the client
        params: Channel parameters (ρ, τ, R)

    Returns:
        1 − exp(−(2^R−1)·d^τ/ρ)
    """
    d = _require_positive("distance", d)
    return _outage_from_exponent(params.rate_factor * d ** params.path_loss_exp / params.snr)


def _check_split(alpha2: float, r: float) -> tuple[float, float]:
    alpha2 = float(alpha2)
    low = r / (1.0 + r)
    if not math.isfinite(alpha2) or not (low < alpha2 < 1.0):
        raise ConstraintViolationError(
            f"power fraction of the far client must lie in ({low:.6f}, 1), got {alpha2}"
        )
    alpha1 = 1.0 - alpha2
    return alpha1, alpha2 - alpha1 * r


def noma2_outage_far(alpha2: float, d2: float, params: ChannelParams) -> float:
    """
    Outage probability of the far client under two-user NOMA

    The far client decodes its own message treating the near client's signal as
    interference.
    """
    r = params.rate_factor
    _, margin = _check_split(alpha2, r)
    d2 = _require_positive("distance", d2)
    return _outage_from_exponent(r * d2 ** params.path_loss_exp / (params.snr * margin))


def noma2_outage_near(alpha2: float, d1: float, params: ChannelParams) -> float:
    """
    Outage probability of the near client under two-user NOMA

    The near client must first decode the far client's message (SIC) and then its
    own interference-free message; the binding constraint is the larger exponent.
    """
    r = params.rate_factor
    alpha1, margin = _check_split(alpha2, r)
    d1 = _require_positive("distance", d1)
    scaled = r * d1 ** params.path_loss_exp / params.snr
    return _outage_from_exponent(max(scaled / margin, scaled / alpha1))


def to_hat_powers(raw_powers: Sequence[float], r: float) -> np.ndarray:
    """
    Transform raw powers (in decoding order) to the linearizing variables

    p̂_k = p_k − r·Σ_{i>k} p_i. Non-positive entries mark a violated SIC condition.
    """
    raw = np.asarray(raw_powers, dtype=float)
    tail = np.concatenate((np.cumsum(raw[::-1])[::-1][1:], [0.0])) if raw.size else raw
    return raw - r * tail


def from_hat_powers(hat_powers: Sequence[float], r: float) -> np.ndarray:
    """Back-substitute raw powers from the linearizing variables (inverse of to_hat_powers)"""
    hat = np.asarray(hat_powers, dtype=float)
    raw = np.empty_like(hat)
    tail = 0.0
    for k in range(hat.size - 1, -1, -1):
        raw[k] = hat[k] + r * tail
        tail += raw[k]
    return raw


@dataclass(frozen=True)
class PowerAllocation:
    """
    Served clients in decoding order with their powers

    Attributes:
        served: Client indices in SIC decoding order
        raw_powers: Power of every client (zero for unserved), length N
        hat_powers: Linearizing variables of the served clients, in decoding order
    """
    served: tuple[int, ...]
    raw_powers: tuple[float, ...]
    hat_powers: tuple[float, ...]

    def __post_init__(self):
        if len(set(self.served)) != len(self.served):
            raise InvalidParameterError(f"served set has duplicates: {self.served}")
        if len(self.hat_powers) != len(self.served):
            raise InvalidParameterError("hat_powers must have one entry per served client")
        n = len(self.raw_powers)
        if any(not 0 <= i < n for i in self.served):
            raise InvalidParameterError(f"served index out of range for {n} clients: {self.served}")
        if any(p < 0.0 for p in self.raw_powers):
            raise InvalidParameterError(f"raw powers must be nonnegative: {self.raw_powers}")

    @classmethod
    def from_raw(cls, served: Sequence[int], powers: Sequence[float], n_clients: int, r: float) -> "PowerAllocation":
        """Build from the raw powers of the served clients (decoding order)"""
        raw = [0.0] * n_clients
        for client, p in zip(served, powers, strict=True):
            raw[client] = float(p)
        hat = to_hat_powers(powers, r)
        return cls(served=tuple(served), raw_powers=tuple(raw), hat_powers=tuple(float(x) for x in hat))

    @classmethod
    def from_hat(cls, served: Sequence[int], hat_powers: Sequence[float], n_clients: int, r: float) -> "PowerAllocation":
        """Build from the linearizing variables of the served clients (decoding order)"""
        powers = from_hat_powers(hat_powers, r)
        raw = [0.0] * n_clients
        for client, p in zip(served, powers, strict=True):
            raw[client] = float(p)
        return cls(served=tuple(served), raw_powers=tuple(raw), hat_powers=tuple(float(x) for x in hat_powers))

    @classmethod
    def single(cls, client: int, n_clients: int, budget: float) -> "PowerAllocation":
        """OMA: one client at full budget"""
        raw = [0.0] * n_clients
        raw[client] = float(budget)
        return cls(served=(client,), raw_powers=tuple(raw), hat_powers=(float(budget),))

    @property
    def k(self) -> int:
        return len(self.served)

    @property
    def total_power(self) -> float:
        return float(sum(self.raw_powers))

    def is_feasible(self, params: ChannelParams, rtol: float = 1e-9) -> bool:
        """Budget respected and every served client decodable"""
        within_budget = self.total_power <= params.power_budget * (1.0 + rtol)
        return within_budget and all(h > 0.0 for h in self.hat_powers)


class KUserOutage(NamedTuple):
    """Outage probability of one served client, flagged when SIC can never succeed"""
    probability: float
    always_outage: bool


def noma_k_outage(alloc: PowerAllocation, k: int, params: ChannelParams) -> KUserOutage:
    """
    Outage probability of the client at decoding position k (1-based)

    The client must decode every message earlier in the decoding order, so the
    exponent uses the largest 1/p̂ over the prefix. A non-positive p̂ in the prefix
    means an outage always occurs.
    """
    if not 1 <= k <= alloc.k:
        raise InvalidParameterError(f"decoding position must be in [1, {alloc.k}], got {k}")
    prefix = alloc.hat_powers[:k]
    if any(h <= 0.0 for h in prefix):
        return KUserOutage(1.0, True)
    client = alloc.served[k - 1]
    exponent = params.outage_scale(client) * max(1.0 / h for h in prefix)
    return KUserOutage(_outage_from_exponent(exponent), False)


def success_probabilities(alloc: PowerAllocation, params: ChannelParams) -> np.ndarray:
    """Per-client delivery probability (zero for unserved clients), length N"""
    success = np.zeros(params.n_clients)
    weakest = math.inf
    for position, (client, hat) in enumerate(zip(alloc.served, alloc.hat_powers)):
        if hat <= 0.0:
            # every later client decodes this message first
            logger.debug(f"[channel] SIC infeasible from decoding position {position + 1}: p̂={hat:.4g}")
            break
        weakest = min(weakest, hat)
        success[client] = math.exp(-params.outage_scale(client) / weakest)
    return success
