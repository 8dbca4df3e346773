"""Compare the compiled and pure-Python device-stepping kernels.

    python benchmarks/bench_kernels.py [--steps 200000] [--repeat 3]

Both kernels get identical inputs; the script checks that their outputs match
bit for bit before reporting throughput.
"""

import argparse
import time

import numpy as np

from memprog import kernels
from memprog.device import DeviceParams, Polarity
from memprog.kernels import _pure


def _time(fn, state, rate, eps, noise, n, bands, repeat):
    best, result = float("inf"), None
    for _ in range(repeat):
        s, out = state.copy(), np.empty(n)
        t0 = time.perf_counter()
        fn(s, rate, eps, noise, n, bands, out)
        best = min(best, time.perf_counter() - t0)
        result = (s, out)
    return best, result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    p = DeviceParams()
    rng = np.random.default_rng(0)
    n = args.steps
    state = np.array([0.05, 1.0, p.g_min_nominal, p.g_max_nominal])
    cases = {
        "noisy": rng.standard_normal((n, 3)) * [p.sigma_rate, p.sigma_bound, p.sigma_bound],
        "noise-free": np.zeros((0, 3)),
    }
    fast = kernels.advance if kernels.BACKEND == "cython" else None
    print(f"compiled kernel available: {fast is not None}; {n} steps, best of {args.repeat}")
    print(f"{'case':<12}{'pure [Msteps/s]':>18}{'compiled [Msteps/s]':>22}{'speedup':>10}")
    for name, noise in cases.items():
        common = (state, p.step_rate(Polarity.SET), p.eps_floor, noise, n, p.bands(), args.repeat)
        t_pure, r_pure = _time(_pure.advance, *common)
        if fast is None:
            print(f"{name:<12}{n / t_pure / 1e6:>18.2f}{'n/a':>22}{'n/a':>10}")
            continue
        t_fast, r_fast = _time(fast, *common)
        same = r_pure[0].tobytes() == r_fast[0].tobytes() and r_pure[1].tobytes() == r_fast[1].tobytes()
        if not same:
            raise SystemExit(f"{name}: compiled and pure kernels disagree")
        print(f"{name:<12}{n / t_pure / 1e6:>18.2f}{n / t_fast / 1e6:>22.2f}{t_pure / t_fast:>9.0f}x")


if __name__ == "__main__":
    main()
