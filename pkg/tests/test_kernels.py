import numpy as np
import pytest
from hypothesis import given, strategies as st

from memprog import kernels
from memprog.kernels import _pure

BANDS = np.array([0.9, 1.1, 45.0, 55.0, 360.0, 440.0])


def _run(fn, state, rate, noise, n, target=0.0, stop=False, record=True):
    s = np.array(state, dtype=np.float64)
    out = np.full(n, np.nan) if record else np.zeros(0)
    done = fn(s, rate, 0.01, noise, n, BANDS, out, target, stop)
    return s, out, done


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
@given(st.floats(0.0, 1.0), st.floats(-3e-3, 3e-3), st.integers(0, 2**32), st.integers(0, 3000),
       st.booleans(), st.floats(40.0, 420.0), st.booleans())
def test_compiled_matches_pure_bit_for_bit(x, rate, seed, n, noisy, target, stop):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, 3)) * [0.005, 0.7, 0.7] if noisy and n else np.zeros((0, 3))
    state = [x, 1.0, 50.0, 400.0]
    a = _run(kernels.advance, state, rate, noise, n, target, stop)
    b = _run(_pure.advance, state, rate, noise, n, target, stop)
    assert a[2] == b[2]
    assert a[0].tobytes() == b[0].tobytes()
    assert np.array_equal(a[1], b[1], equal_nan=True)


@pytest.mark.parametrize("fn", [kernels.advance, _pure.advance])
def test_stops_on_first_straddle(fn):
    s, out, done = _run(fn, [0.5, 1.0, 50.0, 400.0], 1.28e-3, np.zeros((0, 3)), 10_000,
                        target=230.0, stop=True)
    assert out[done - 1] >= 230.0
    assert done == 1 or out[done - 2] < 230.0
    assert np.isnan(out[done:]).all()


@pytest.mark.parametrize("fn", [kernels.advance, _pure.advance])
def test_reflection_keeps_walks_in_band(fn):
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((5000, 3)) * [0.05, 5.0, 5.0]
    s, out, _ = _run(fn, [0.5, 1.0, 50.0, 400.0], 0.0, noise, 5000)
    assert 0.9 <= s[1] <= 1.1 and 45 <= s[2] <= 55 and 360 <= s[3] <= 440


@pytest.mark.parametrize("fn", [kernels.advance, _pure.advance])
def test_short_buffers_rejected(fn):
    with pytest.raises(ValueError):
        _run(fn, [0.5, 1.0, 50.0, 400.0], 1e-3, np.zeros((3, 3)), 10)


def test_zero_steps_is_noop():
    s, _, done = _run(kernels.advance, [0.3, 1.0, 50.0, 400.0], 1e-3, np.zeros((0, 3)), 0)
    assert done == 0 and s.tolist() == [0.3, 1.0, 50.0, 400.0]


def test_env_var_forces_pure_fallback():
    import os
    import subprocess
    import sys

    code = ("from memprog import kernels; from memprog.device import *; "
            "p = DeviceParams(); s = new_device(p, 3); "
            "print(kernels.BACKEND, repr(run_steps(s, p, Polarity.SET, 300)[-1]))")
    env = {**os.environ, "MEMPROG_PURE_PYTHON": "1"}
    pure = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    env.pop("MEMPROG_PURE_PYTHON")
    default = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, value = pure.stdout.split()
    assert backend == "python"
    assert value == default.stdout.split()[1]
