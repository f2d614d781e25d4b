"""
Configuration management for the adaptive NOMA/OMA age-of-information toolkit
"""
import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()


@dataclass
class SolverConfig:
    """Relative value iteration numerics"""
    span_tol: float = 1e-9
    max_iters: int = 1_000_000
    aperiodicity: float = 0.5  # weight of the Bellman step, the rest is a self-loop
    reference_state: tuple[int, int] = (1, 1)


@dataclass
class AllocatorConfig:
    """Convex power allocation solver configuration"""
    residual_tol: float = 1e-8
    max_iters: int = 100_000
    enumeration_guard: int = 12
    exhaustive_guard: int = 4


@dataclass
class SimulationConfig:
    """Monte Carlo engine configuration"""
    warmup_fraction: float = 0.01
    decision_cache_size: int = 200_000
    workers: int = 1
    rng_chunk: int = 4096


@dataclass
class AppConfig:
    """Main application configuration"""
    solver: SolverConfig = field(default_factory=SolverConfig)
    allocator: AllocatorConfig = field(default_factory=AllocatorConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    log_level: str = "INFO"
    log_file: str | None = None


def load_config() -> AppConfig:
    """Load configuration from environment variables and defaults"""

    solver_config = SolverConfig(
        span_tol=float(os.getenv("AOI_RVI_SPAN_TOL", "1e-9")),
        max_iters=int(os.getenv("AOI_RVI_MAX_ITERS", "1000000")),
        aperiodicity=float(os.getenv("AOI_RVI_APERIODICITY", "0.5")),
    )

    allocator_config = AllocatorConfig(
        residual_tol=float(os.getenv("AOI_ALLOC_RESIDUAL_TOL", "1e-8")),
        max_iters=int(os.getenv("AOI_ALLOC_MAX_ITERS", "100000")),
        enumeration_guard=int(os.getenv("AOI_ENUMERATION_GUARD", "12")),
        exhaustive_guard=int(os.getenv("AOI_EXHAUSTIVE_GUARD", "4")),
    )

    simulation_config = SimulationConfig(
        warmup_fraction=float(os.getenv("AOI_WARMUP_FRACTION", "0.01")),
        decision_cache_size=int(os.getenv("AOI_DECISION_CACHE_SIZE", "200000")),
        workers=int(os.getenv("AOI_SIM_WORKERS", "1")),
        rng_chunk=int(os.getenv("AOI_RNG_CHUNK", "4096")),
    )

    return AppConfig(
        solver=solver_config,
        allocator=allocator_config,
        simulation=simulation_config,
        log_level=os.getenv("AOI_LOG_LEVEL", "INFO"),
        log_file=os.getenv("AOI_LOG_FILE") or None,
    )


# Global configuration instance
CONFIG = load_config()
