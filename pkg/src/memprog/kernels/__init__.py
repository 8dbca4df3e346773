"""Device-stepping kernel with a compiled fast path and a pure-Python fallback.

``advance(state, rate, eps, noise, n_steps, bands, out, target=0.0,
stop_on_straddle=False) -> int``

Integrates the clamped-logistic switching ODE with one explicit Euler step
per pulse quantum, updating ``state = [x, rho, g_min, g_max]`` in place.

- ``rate`` is the signed per-step rate ``±k·dt``.
- ``noise`` is an ``(m, 3)`` array of pre-scaled random-walk increments for
  ``(rho, g_min, g_max)``; ``m == 0`` means noise-free.
- ``bands`` holds the reflection intervals
  ``[rho_lo, rho_hi, gmin_lo, gmin_hi, gmax_lo, gmax_hi]``.
- ``out`` receives the conductance after every step (length 0 disables it).
- With ``stop_on_straddle``, stepping halts after the first step whose
  conductance lies on the other side of ``target`` (or on it).

Returns the number of steps actually taken. Set ``MEMPROG_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pure

BACKEND = "python"
advance = _pure.advance

if not os.environ.get("MEMPROG_PURE_PYTHON"):
    try:
        from ._fast import advance  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

pure_advance = _pure.advance

__all__ = ["advance", "pure_advance", "BACKEND"]
