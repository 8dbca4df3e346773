"""Phenomenological memristor with S-shaped switching and cycle-to-cycle noise.

The internal switching variable ``x`` follows a clamped logistic ODE

    dx/dt = ±rho·k·(x + eps)·(1 − x + eps)

(``+k_set`` for SET, ``−k_reset`` for RESET). The rate grows as the device
moves away from either boundary and saturates near it, which produces the
S-shaped transition curves and the sluggish response close to ``G_min`` and
``G_max``. Conductance is read as ``G = g_min_t + x·(g_max_t − g_min_t)``.

Noise is a set of bounded random walks, one increment per pulse quantum:
``rho`` (rate multiplier, a stand-in for filament radius/length) and the two
conductance bounds (stand-ins for the vacancy-concentration limits). Each
walk is reflected back into a band around its nominal value.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .errors import ParameterError
from .seeding import child_rng

_EMPTY_NOISE = np.zeros((0, 3))
_EMPTY_OUT = np.zeros(0)


class Polarity(enum.IntEnum):
    SET = 1
    RESET = -1

    @classmethod
    def for_delta(cls, delta_g: float) -> "Polarity":
        return cls.SET if delta_g >= 0 else cls.RESET


@dataclass(frozen=True)
class DeviceParams:
    """Surrogate device constants. Conductances in µS, times in ns.

    The default rates make a noise-free SET transit from x=0.01 to x=0.99
    take about 6000 pulses of 10 ns; RESET is twice as fast. ``sigma_bound``
    gives a bound drift of roughly 2% of the range per 100 pulses.
    """

    g_min_nominal: float = 50.0
    g_max_nominal: float = 400.0
    k_set: float = 1.28e-4
    k_reset: float = 2.56e-4
    eps_floor: float = 0.01
    sigma_rate: float = 0.005
    sigma_bound: float = 0.7
    dt: float = 10.0
    v_set: float = 1.0
    v_reset: float = -1.0
    rho_band: float = 0.1
    bound_band: float = 0.1

    def __post_init__(self):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        bad = [k for k, v in vals.items() if not math.isfinite(v)]
        if bad:
            raise ParameterError(f"non-finite device parameters: {bad}")
        if not 0 < self.g_min_nominal < self.g_max_nominal:
            raise ParameterError(
                f"need 0 < g_min_nominal < g_max_nominal, got "
                f"{self.g_min_nominal}, {self.g_max_nominal}"
            )
        for name in ("dt", "k_set", "k_reset", "eps_floor"):
            if vals[name] <= 0:
                raise ParameterError(f"{name} must be > 0, got {vals[name]}")
        for name in ("sigma_rate", "sigma_bound", "bound_band"):
            if vals[name] < 0:
                raise ParameterError(f"{name} must be >= 0, got {vals[name]}")
        if not 0 <= self.rho_band < 1:
            raise ParameterError(f"rho_band must be in [0, 1), got {self.rho_band}")
        if self.g_min_nominal * (1 + self.bound_band) >= self.g_max_nominal * (1 - self.bound_band):
            raise ParameterError("bound reflection bands overlap")

    @property
    def g_range(self) -> float:
        return self.g_max_nominal - self.g_min_nominal

    @property
    def noisy(self) -> bool:
        return self.sigma_rate > 0 or self.sigma_bound > 0

    def bands(self) -> np.ndarray:
        b = self.bound_band
        return np.array([
            1.0 - self.rho_band, 1.0 + self.rho_band,
            self.g_min_nominal * (1 - b), self.g_min_nominal * (1 + b),
            self.g_max_nominal * (1 - b), self.g_max_nominal * (1 + b),
        ])

    def step_rate(self, polarity: Polarity) -> float:
        return self.k_set * self.dt if polarity == Polarity.SET else -self.k_reset * self.dt

    def steps_for(self, duration: float) -> int:
        """Number of pulse quanta covering ``duration`` (rounded up)."""
        if duration < 0 or not math.isfinite(duration):
            raise ParameterError(f"pulse duration must be finite and >= 0, got {duration}")
        # absorb float noise such as 30.000000000004 ns before rounding up
        return int(math.ceil(duration / self.dt - 1e-9))

    def without_noise(self) -> "DeviceParams":
        return replace(self, sigma_rate=0.0, sigma_bound=0.0)


@dataclass(eq=False)
class DeviceState:
    x: float
    g_min_t: float
    g_max_t: float
    rho: float
    rng: np.random.Generator = field(repr=False)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.rho, self.g_min_t, self.g_max_t])

    def load_array(self, arr) -> None:
        self.x, self.rho, self.g_min_t, self.g_max_t = (float(v) for v in arr)

    def same_as(self, other: "DeviceState") -> bool:
        """Bit-for-bit equality, including the position of the random stream."""
        return (
            self.as_array().tobytes() == other.as_array().tobytes()
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )

    def copy(self) -> "DeviceState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return DeviceState(self.x, self.g_min_t, self.g_max_t, self.rho, rng)


def new_device(params: DeviceParams, seed) -> DeviceState:
    """Fresh device at the midpoint (x=0.5) with nominal bounds and rho=1."""
    if not isinstance(params, DeviceParams):
        raise ParameterError("params must be a DeviceParams")
    return DeviceState(
        x=0.5,
        g_min_t=float(params.g_min_nominal),
        g_max_t=float(params.g_max_nominal),
        rho=1.0,
        rng=np.random.default_rng(seed),
    )


def read_conductance(state: DeviceState) -> float:
    return state.g_min_t + state.x * (state.g_max_t - state.g_min_t)


def set_conductance(state: DeviceState, g: float) -> DeviceState:
    """Place the switching variable so that the current reading equals ``g``.

    Targets beyond the current bounds pin ``x`` to 0 or 1.
    """
    span = state.g_max_t - state.g_min_t
    state.x = min(1.0, max(0.0, (g - state.g_min_t) / span))
    return state


def _noise_block(state: DeviceState, params: DeviceParams, n: int) -> np.ndarray:
    scale = np.array([params.sigma_rate, params.sigma_bound, params.sigma_bound])
    return state.rng.standard_normal((n, 3)) * scale


def run_steps(
    state: DeviceState,
    params: DeviceParams,
    polarity: Polarity,
    n_steps: int,
    noisy: bool = True,
    record: bool = True,
) -> np.ndarray:
    """Apply ``n_steps`` pulse quanta; returns G after each step (empty if not recording)."""
    if n_steps < 0:
        raise ParameterError(f"n_steps must be >= 0, got {n_steps}")
    noise = _noise_block(state, params, n_steps) if noisy and params.noisy else _EMPTY_NOISE
    out = np.empty(n_steps) if record else _EMPTY_OUT
    arr = state.as_array()
    kernels.advance(arr, params.step_rate(polarity), params.eps_floor, noise,
                    n_steps, params.bands(), out)
    state.load_array(arr)
    return out


def apply_pulse(
    state: DeviceState,
    params: DeviceParams,
    polarity: Polarity,
    duration: float,
    noisy: bool = True,
) -> DeviceState:
    """Apply one rectangular pulse of ``duration`` ns (rounded up to whole ``dt``).

    Mutates and returns ``state``. With ``noisy`` set, one noise step follows
    every quantum.
    """
    run_steps(state, params, Polarity(polarity), params.steps_for(duration),
              noisy=noisy, record=False)
    return state


def noise_step(state: DeviceState, params: DeviceParams) -> DeviceState:
    """One random-walk increment of rho and both bounds, with reflection."""
    if not params.noisy:
        return state
    arr = state.as_array()
    kernels.advance(arr, 0.0, params.eps_floor, _noise_block(state, params, 1),
                    1, params.bands(), _EMPTY_OUT)
    state.load_array(arr)
    return state


def switching_curve(
    params: DeviceParams,
    n_pulses: int,
    n_devices: int,
    polarity: Polarity = Polarity.SET,
    noisy: bool = True,
    seed: int = 0,
) -> np.ndarray:
    """Per-device G traces of shape ``(n_devices, n_pulses)``.

    Each device starts at the boundary opposite to the pulse direction and
    receives ``n_pulses`` quanta; G is recorded after each.
    """
    if n_pulses < 1 or n_devices < 1:
        raise ParameterError("n_pulses and n_devices must be >= 1")
    polarity = Polarity(polarity)
    traces = np.empty((n_devices, n_pulses))
    for i in range(n_devices):
        state = new_device(params, child_rng(seed, 0, i).integers(2**63))
        state.x = 0.0 if polarity == Polarity.SET else 1.0
        traces[i] = run_steps(state, params, polarity, n_pulses, noisy=noisy)
    return traces


@functools.lru_cache(maxsize=64)
def full_transit_steps(params: DeviceParams) -> int:
    """Noise-free SET quanta needed to move x from 0.01 to 0.99."""
    clean = params.without_noise()
    arr = np.array([0.01, 1.0, clean.g_min_nominal, clean.g_max_nominal])
    target = clean.g_min_nominal + 0.99 * clean.g_range
    cap = 10_000_000
    n = kernels.advance(arr, clean.step_rate(Polarity.SET), clean.eps_floor, _EMPTY_NOISE,
                        cap, clean.bands(), _EMPTY_OUT, target, True)
    if n >= cap:
        raise ParameterError("SET rate too small: transit does not finish")
    return n
