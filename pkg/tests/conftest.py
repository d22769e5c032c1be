import numpy as np
import pytest

from codedfl.delay import DeviceProfile

# Fastest device of the 24-device setup: 500 MACs per point at 1536 KMAC/s,
# 16 kbit + 10% header packets over 216 kbit/s, erasure 0.1.
FASTEST_A = 500 / 1.536e6
FASTEST_TAU = 1.1 * 32 * 500 / 216e3


@pytest.fixture
def fastest():
    return DeviceProfile(0, a=FASTEST_A, mu=2 / FASTEST_A, tau=FASTEST_TAU, p=0.1, ell=300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
