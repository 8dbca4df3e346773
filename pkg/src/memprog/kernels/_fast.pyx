# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled device-stepping kernel. Must stay bit-identical to ``_pure.advance``."""

cdef inline double _reflect(double v, double lo, double hi) noexcept nogil:
    if hi <= lo:
        return lo
    while v < lo or v > hi:
        if v < lo:
            v = 2.0 * lo - v
        else:
            v = 2.0 * hi - v
    return v


cdef inline double _clamp01(double x) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def advance(double[::1] state, double rate, double eps,
            const double[:, ::1] noise, Py_ssize_t n_steps,
            const double[::1] bands, double[::1] out,
            double target=0.0, bint stop_on_straddle=False):
    cdef double x = state[0]
    cdef double rho = state[1]
    cdef double gmin = state[2]
    cdef double gmax = state[3]
    cdef bint noisy = noise.shape[0] > 0
    cdef bint record = out.shape[0] > 0
    cdef double g_prev = gmin + x * (gmax - gmin)
    cdef double g
    cdef Py_ssize_t i, done = 0

    if noisy and noise.shape[0] < n_steps:
        raise ValueError("noise buffer shorter than n_steps")
    if record and out.shape[0] < n_steps:
        raise ValueError("output buffer shorter than n_steps")

    with nogil:
        for i in range(n_steps):
            x = _clamp01(x + rate * rho * (x + eps) * (1.0 - x + eps))
            if noisy:
                rho = _reflect(rho + noise[i, 0], bands[0], bands[1])
                gmin = _reflect(gmin + noise[i, 1], bands[2], bands[3])
                gmax = _reflect(gmax + noise[i, 2], bands[4], bands[5])
                x = _clamp01(x)
            g = gmin + x * (gmax - gmin)
            if record:
                out[i] = g
            done = i + 1
            if stop_on_straddle and (g_prev - target) * (g - target) <= 0.0:
                break
            g_prev = g

    state[0] = x
    state[1] = rho
    state[2] = gmin
    state[3] = gmax
    return done
