"""
Slotted simulation of scheduling policies
"""
from .engine import SimConfig, SimResult, UniformStream, run, sample_outcomes, step_aoi
from .policies import POLICY_PARAMS, PolicySpec, SchedulingPolicy, resolve_policy
from .sweep import SweepPoint, sweep

__all__ = [
    "POLICY_PARAMS",
    "PolicySpec",
    "SchedulingPolicy",
    "SimConfig",
    "SimResult",
    "SweepPoint",
    "UniformStream",
    "resolve_policy",
    "run",
    "sample_outcomes",
    "step_aoi",
    "sweep",
]
