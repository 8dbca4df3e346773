import numpy as np
import pytest
from hypothesis import settings

from memprog.dataset import generate_dataset
from memprog.device import DeviceParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return DeviceParams()


@pytest.fixture(scope="session")
def clean_params(params):
    return params.without_noise()


@pytest.fixture(scope="session")
def small_ds(params):
    return generate_dataset(params, n=300, seed=3)


def euler_reference(x, rate, eps, n):
    """Independent noise-free stepping loop in plain Python."""
    xs = []
    for _ in range(n):
        x = min(1.0, max(0.0, x + rate * (x + eps) * (1.0 - x + eps)))
        xs.append(x)
    return np.array(xs)


def device_params_strategy():
    """Parameter draws over the ranges the property suite covers (see README)."""
    from hypothesis import strategies as st

    @st.composite
    def draw(d):
        g_min = d(st.floats(5.0, 100.0))
        g_max = g_min * d(st.floats(3.0, 20.0))
        k_set = d(st.floats(2e-5, 1e-3))
        return DeviceParams(
            g_min_nominal=g_min, g_max_nominal=g_max,
            k_set=k_set, k_reset=k_set * d(st.floats(0.5, 4.0)),
            eps_floor=d(st.floats(0.002, 0.05)),
            sigma_rate=d(st.floats(0.0, 0.02)),
            sigma_bound=d(st.floats(0.0, 0.01)) * g_max,
        )

    return draw()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line)
