"""Noise-free baseline: the pulse time that realises a given ΔG on the clean model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .device import DeviceParams, Polarity
from .errors import ParameterError, RangeError

_EMPTY_NOISE = np.zeros((0, 3))
_EMPTY_OUT = np.zeros(0)


@dataclass(frozen=True)
class OracleConfig:
    tol_g: float = 0.5  # µS
    max_time: float = 1e6  # ns

    def check(self, params: DeviceParams) -> None:
        if not self.tol_g > 0:
            raise ParameterError(f"tol_g must be > 0, got {self.tol_g}")
        if not self.max_time >= params.dt:
            raise ParameterError(f"max_time must be >= dt, got {self.max_time}")


@dataclass(frozen=True)
class OracleResult:
    t: float  # signed ns
    g_landing: float  # noise-free conductance after the pulse
    saturated: bool  # the search hit max_time before reaching the target
    within_tol: bool


def _clean_g(params: DeviceParams, x: float) -> float:
    return params.g_min_nominal + x * params.g_range


def oracle_pulse_time(
    params: DeviceParams,
    g_start: float,
    delta_g: float,
    cfg: OracleConfig = OracleConfig(),
) -> OracleResult:
    """Signed pulse time whose noise-free landing is closest to ``g_start + delta_g``.

    A nonzero ``delta_g`` always yields at least one pulse quantum, so the
    sign of the result matches the sign of the request.

    Brackets the crossing by doubling the step count, then bisects. Both
    phases continue from the last state short of the target instead of
    re-integrating from ``g_start`` (valid because noise-free pulses add).
    """
    cfg.check(params)
    lo_g, hi_g = params.g_min_nominal, params.g_max_nominal
    target = g_start + delta_g
    for name, g in (("g_start", g_start), ("target", target)):
        if not (math.isfinite(g) and lo_g <= g <= hi_g):
            raise RangeError(f"{name}={g} outside nominal range [{lo_g}, {hi_g}]")
    if delta_g == 0:
        return OracleResult(0.0, g_start, False, True)

    polarity = Polarity.for_delta(delta_g)
    sign = int(polarity)
    rate = params.step_rate(polarity)
    bands = params.bands()
    max_steps = max(1, int(cfg.max_time // params.dt))

    def advance(arr, n):
        arr = arr.copy()
        kernels.advance(arr, rate, params.eps_floor, _EMPTY_NOISE, n, bands, _EMPTY_OUT)
        return arr

    def g_of(arr):
        return float(_clean_g(params, arr[0]))

    def reached(arr):
        return sign * (g_of(arr) - target) >= 0

    x0 = (g_start - lo_g) / params.g_range
    s_lo = np.array([x0, 1.0, lo_g, hi_g])
    lo, step = 0, 1
    saturated = False
    while True:
        hi = min(lo + step, max_steps)
        s_hi = advance(s_lo, hi - lo)
        if reached(s_hi):
            break
        if hi == max_steps:
            saturated = True
            break
        lo, s_lo = hi, s_hi
        step *= 2

    if saturated:
        n, g_land = hi, g_of(s_hi)
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            s_mid = advance(s_lo, mid - lo)
            if reached(s_mid):
                hi, s_hi = mid, s_mid
            else:
                lo, s_lo = mid, s_mid
        g_lo, g_hi = g_of(s_lo), g_of(s_hi)
        # lo == 0 would return t = 0 for a nonzero request; keep the sign
        if lo > 0 and abs(g_lo - target) < abs(g_hi - target):
            n, g_land = lo, g_lo
        else:
            n, g_land = hi, g_hi
    return OracleResult(
        t=sign * n * params.dt,
        g_landing=g_land,
        saturated=saturated,
        within_tol=bool(abs(g_land - target) <= cfg.tol_g),
    )
