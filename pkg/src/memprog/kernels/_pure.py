"""Pure-Python device-stepping kernel, used when the compiled one is unavailable."""


def _reflect(v, lo, hi):
    if hi <= lo:
        return lo
    while v < lo or v > hi:
        if v < lo:
            v = 2.0 * lo - v
        else:
            v = 2.0 * hi - v
    return v


def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def advance(state, rate, eps, noise, n_steps, bands, out,
            target=0.0, stop_on_straddle=False):
    x, rho, gmin, gmax = (float(v) for v in state)
    noisy = noise.shape[0] > 0
    record = out.shape[0] > 0
    if noisy and noise.shape[0] < n_steps:
        raise ValueError("noise buffer shorter than n_steps")
    if record and out.shape[0] < n_steps:
        raise ValueError("output buffer shorter than n_steps")
    rows = noise.tolist() if noisy else None
    r_lo, r_hi, lo_lo, lo_hi, hi_lo, hi_hi = (float(b) for b in bands)
    rate = float(rate)
    eps = float(eps)
    target = float(target)

    g_prev = gmin + x * (gmax - gmin)
    done = 0
    trace = []
    for i in range(n_steps):
        x = _clamp01(x + rate * rho * (x + eps) * (1.0 - x + eps))
        if noisy:
            n_rho, n_lo, n_hi = rows[i]
            rho = _reflect(rho + n_rho, r_lo, r_hi)
            gmin = _reflect(gmin + n_lo, lo_lo, lo_hi)
            gmax = _reflect(gmax + n_hi, hi_lo, hi_hi)
            x = _clamp01(x)
        g = gmin + x * (gmax - gmin)
        trace.append(g)
        done = i + 1
        if stop_on_straddle and (g_prev - target) * (g - target) <= 0.0:
            break
        g_prev = g

    if record and done:
        out[:done] = trace
    state[0] = x
    state[1] = rho
    state[2] = gmin
    state[3] = gmax
    return done
