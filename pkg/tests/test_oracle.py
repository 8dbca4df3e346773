import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import euler_reference
from memprog.device import Polarity, apply_pulse, new_device, read_conductance, set_conductance
from memprog.errors import ParameterError, RangeError
from memprog.oracle import OracleConfig, oracle_pulse_time


def _brute_force(p, g_start, delta):
    """Closest-landing step count by scanning every n (ties go to the smaller n)."""
    rate = p.step_rate(Polarity.for_delta(delta))
    x0 = (g_start - p.g_min_nominal) / p.g_range
    xs = euler_reference(x0, rate, p.eps_floor, 20_000)
    g = p.g_min_nominal + xs * p.g_range
    n = int(np.argmin(np.abs(g - (g_start + delta)))) + 1
    return n, g[n - 1]


def _land(p, g_start, t):
    s = set_conductance(new_device(p, 0), g_start)
    if t:
        apply_pulse(s, p, Polarity.SET if t > 0 else Polarity.RESET, abs(t), noisy=False)
    return read_conductance(s)


@pytest.mark.parametrize("g0, d", [(225, 50), (225, -50), (100, 240), (340, -240), (60, 1), (390, -3)])
def test_matches_brute_force_scan(clean_params, g0, d):
    r = oracle_pulse_time(clean_params, g0, d)
    n, g = _brute_force(clean_params, g0, d)
    assert abs(r.t) == n * clean_params.dt
    assert r.g_landing == pytest.approx(g, abs=1e-9)
    assert r.within_tol and not r.saturated


def test_frozen_examples(clean_params):
    # values frozen from the brute-force scan above
    assert oracle_pulse_time(clean_params, 225.0, 50.0).t == 4410.0
    assert oracle_pulse_time(clean_params, 225.0, -50.0).t == -2200.0


def test_zero_delta_is_zero_time(clean_params):
    r = oracle_pulse_time(clean_params, 200.0, 0.0)
    assert r.t == 0.0 and r.within_tol


def test_reset_faster_than_set(clean_params):
    up = oracle_pulse_time(clean_params, 200.0, 30.0).t
    down = oracle_pulse_time(clean_params, 230.0, -30.0).t
    assert abs(down) < up


@pytest.mark.parametrize("g0, d", [(30.0, 10.0), (225.0, 200.0), (225.0, -180.0)])
def test_out_of_range_rejected(clean_params, g0, d):
    with pytest.raises(RangeError):
        oracle_pulse_time(clean_params, g0, d)


def test_saturates_at_max_time(clean_params):
    r = oracle_pulse_time(clean_params, 100.0, 250.0, OracleConfig(max_time=1000.0))
    assert r.saturated and not r.within_tol and r.t == 1000.0


def test_bad_config(clean_params):
    with pytest.raises(ParameterError):
        oracle_pulse_time(clean_params, 100.0, 10.0, OracleConfig(tol_g=0.0))


lo_g, hi_g = 60.0, 390.0


@given(st.floats(lo_g, hi_g), st.floats(lo_g, hi_g))
def test_sign_and_round_trip(clean_params, g0, g1):
    d = g1 - g0
    r = oracle_pulse_time(clean_params, g0, d)
    assert np.sign(r.t) == np.sign(d)
    assert abs(_land(clean_params, g0, r.t) - g1) <= 0.5


@given(st.floats(lo_g, 300.0), st.floats(1.0, 40.0), st.floats(1.0, 40.0))
def test_larger_request_longer_pulse(clean_params, g0, d1, d2):
    a, b = sorted((d1, d2))
    assert oracle_pulse_time(clean_params, g0, a).t <= oracle_pulse_time(clean_params, g0, b).t
    assert oracle_pulse_time(clean_params, g0 + b, -b).t <= oracle_pulse_time(clean_params, g0 + b, -a).t
