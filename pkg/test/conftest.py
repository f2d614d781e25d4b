"""
Shared fixtures for the scheduling toolkit tests
"""

import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from src.channel import ChannelParams
from src.mdp2 import MdpConfig, rvi_solve


@pytest.fixture(scope="session")
def two_client_channel() -> ChannelParams:
    """Two clients at d=(2, 4), 18 dB, τ=2, R=1"""
    return ChannelParams.from_snr_db((2.0, 4.0), 18.0)


@pytest.fixture(scope="session")
def five_client_channel() -> ChannelParams:
    """Five clients at d_i = 6−i, 20 dB"""
    return ChannelParams.from_snr_db((5.0, 4.0, 3.0, 2.0, 1.0), 20.0)


@pytest.fixture(scope="session")
def two_client_mdp_config(two_client_channel) -> MdpConfig:
    return MdpConfig(channel=two_client_channel, weights=(0.5, 0.5), levels=10, delta_max=100)


@pytest.fixture(scope="session")
def two_client_policy(two_client_mdp_config):
    """Solved two-client policy on the 100 x 100 grid"""
    return rvi_solve(two_client_mdp_config)
