import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_device():
    """Two cores, three tasklets: small enough to keep unit tests fast,
    big enough to exercise sharing and halo exchange."""
    from pimflow.simdev import Device, DeviceConfig
    return Device(DeviceConfig(n_dpus=2, tasklets=3))
