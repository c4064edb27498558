import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from threadpoolctl import threadpool_limits

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURE_STEPS = 200
FIXTURE_LR = 1e-3
FIXTURE_SAMPLES = 256


@pytest.fixture(scope="session")
def toy_fixture_run():
    """The 200-step regression run; shared because it takes tens of seconds."""
    from pkinet.config import toy_config
    from pkinet.trainer import gen_synthetic, train_toy

    data = gen_synthetic(0, FIXTURE_SAMPLES)
    with threadpool_limits(limits=1):
        return train_toy(toy_config(), data, FIXTURE_STEPS, FIXTURE_LR, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    gate = sys.modules.get("test_acceptance")
    if gate is None or not gate.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(gate.RESULTS):
        terminalreporter.write_line(gate.RESULTS[n])
