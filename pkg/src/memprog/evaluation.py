"""Deploy pulse predictors on simulated devices.

Every routine touches a device only through ``read_conductance`` and
``apply_pulse``; a predictor sees readings, never the hidden state.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import parallel_map
from .dataset import Norm, denormalize, normalize, operational_range
from .device import DeviceParams, Polarity, apply_pulse, new_device, read_conductance, set_conductance
from .errors import PredictorError
from .nn import Mlp, forward, rpd
from .oracle import OracleConfig, oracle_pulse_time
from .seeding import child_seed

# reference operating points, defined on the default 50–400 µS range and rescaled to others
REFERENCE_RANGE = (50.0, 400.0)
REFERENCE_TARGETS = (100.0, 220.0, 340.0)
BASELINE_PULSE_NS = 500.0
WINDOW_US = 50.0


class NetworkPredictor:
    def __init__(self, mlp: Mlp, norm: Norm, name="network"):
        self.mlp = mlp
        self.norm = norm
        self.name = name

    def pulse_times(self, g_start, delta_g) -> np.ndarray:
        x = np.column_stack([normalize(np.atleast_1d(g_start), "G", self.norm),
                             normalize(np.atleast_1d(delta_g), "G", self.norm)])
        return denormalize(forward(self.mlp, x), "T", self.norm)

    def digest(self) -> str:
        doc = json.dumps({"model": self.mlp.to_dict(), "norm": asdict(self.norm)}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


class OraclePredictor:
    """Noise-free baseline. Readings and targets are clipped into the nominal range first."""

    name = "oracle"

    def __init__(self, params: DeviceParams, cfg: OracleConfig = OracleConfig()):
        self.params = params
        self.cfg = cfg

    def pulse_times(self, g_start, delta_g) -> np.ndarray:
        lo, hi = self.params.g_min_nominal, self.params.g_max_nominal
        out = []
        for g, d in zip(np.atleast_1d(g_start), np.atleast_1d(delta_g)):
            g0 = min(max(float(g), lo), hi)
            target = min(max(float(g) + float(d), lo), hi)
            out.append(oracle_pulse_time(self.params.without_noise(), g0, target - g0, self.cfg).t)
        return np.array(out)

    def digest(self) -> str:
        doc = json.dumps({"params": asdict(self.params), "cfg": asdict(self.cfg)}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


def _pulse(state, params, t, noisy=True):
    if not math.isfinite(t):
        raise PredictorError(f"predictor emitted non-finite pulse time {t}")
    if t != 0:
        apply_pulse(state, params, Polarity.SET if t > 0 else Polarity.RESET, abs(t), noisy=noisy)


def scaled_targets(params: DeviceParams, targets=REFERENCE_TARGETS) -> tuple:
    """Map reference targets from the 50–400 µS reference range onto ``params``' nominal range."""
    lo, hi = REFERENCE_RANGE
    return tuple(params.g_min_nominal + (t - lo) / (hi - lo) * params.g_range for t in targets)


def central_range(params: DeviceParams, margin: float = 0.05, keep: float = 0.8) -> tuple:
    """Central ``keep`` fraction of the operational range."""
    lo, hi = operational_range(params, margin)
    pad = (1 - keep) / 2 * (hi - lo)
    return lo + pad, hi - pad


# -- one-shot programming ---------------------------------------------------


@dataclass
class SweepReport:
    g_start: np.ndarray
    g_target: np.ndarray
    t_pred: np.ndarray
    g_end: np.ndarray
    per_trial_rpd: np.ndarray
    edges: np.ndarray
    cells: dict  # (start_bin, target_bin) -> {"mean", "std", "count"}
    mean_rpd: float
    frac_within_50pct: float
    seed: int = 0
    predictor: str = ""

    def trial_rows(self):
        for i in range(len(self.g_start)):
            yield [i, repr(self.g_start[i]), repr(self.g_target[i]), repr(self.t_pred[i]),
                   repr(self.g_end[i]), repr(self.per_trial_rpd[i])]

    def write_csv(self, trials_path, cells_path):
        with open(trials_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "g_start_uS", "g_target_uS", "t_pred_ns", "g_end_uS", "rpd"])
            w.writerows(self.trial_rows())
        with open(cells_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["g_start_lo_uS", "g_start_hi_uS", "g_target_lo_uS", "g_target_hi_uS",
                        "mean_rpd", "std_rpd", "count"])
            for (a, b), c in sorted(self.cells.items()):
                w.writerow([self.edges[a], self.edges[a + 1], self.edges[b], self.edges[b + 1],
                            repr(c["mean"]), repr(c["std"]), c["count"]])

    def summary(self) -> dict:
        return {"mean_rpd": self.mean_rpd, "frac_within_50pct": self.frac_within_50pct,
                "n_trials": int(len(self.g_start)), "seed": self.seed, "predictor": self.predictor}


def _one_shot_trial(args):
    predictor, params, seed, i, lo, hi, noisy = args
    rng = np.random.default_rng(child_seed(seed, 30, i))
    g_start, g_target = rng.uniform(lo, hi, size=2)
    state = set_conductance(new_device(params, rng), g_start)
    g0 = read_conductance(state)
    t = float(predictor.pulse_times(g0, g_target - g0)[0])
    _pulse(state, params, t, noisy)
    return g0, g_target, t, read_conductance(state)


def one_shot_eval(predictor, params: DeviceParams, n_trials: int = 1000, seed: int = 0,
                  g_range: tuple | None = None, n_bins: int = 8, noisy: bool = True,
                  jobs: int = 1) -> SweepReport:
    """Single-pulse programming from random starts to random targets on fresh devices.

    Starts and targets are drawn uniformly from ``g_range`` (default: the
    central 80% of the operational range).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    lo, hi = g_range if g_range is not None else central_range(params)
    rows = parallel_map(_one_shot_trial,
                        [(predictor, params, seed, i, lo, hi, noisy) for i in range(n_trials)], jobs)
    g0, gt, t, ge = (np.array(c) for c in zip(*rows))
    rep = rpd(ge, gt)
    edges = np.linspace(lo, hi, n_bins + 1)
    sb = np.clip(np.searchsorted(edges, g0, side="right") - 1, 0, n_bins - 1)
    tb = np.clip(np.searchsorted(edges, gt, side="right") - 1, 0, n_bins - 1)
    cells = {}
    for key in sorted(set(zip(sb.tolist(), tb.tolist()))):
        m = (sb == key[0]) & (tb == key[1])
        vals = rep.per_trial_rpd[m]
        cells[key] = {"mean": float(vals.mean()), "std": float(vals.std()), "count": int(m.sum())}
    return SweepReport(g0, gt, t, ge, rep.per_trial_rpd, edges, cells, rep.mean_rpd,
                       rep.frac_within_50pct, seed, getattr(predictor, "name", ""))


# -- write and verify -------------------------------------------------------


@dataclass
class WavTrajectory:
    g_target: float
    g_start: float
    records: list = field(default_factory=list)  # (iteration, t_ns, g_after)
    converged_g: float = float("nan")
    iters_to_window: int | None = None

    @property
    def g_after(self) -> np.ndarray:
        return np.array([r[2] for r in self.records])


def write_and_verify(predictor, params: DeviceParams, g_start: float, g_target: float,
                     max_iter: int = 20, window: float = WINDOW_US, seed: int = 0,
                     noisy: bool = True, state=None) -> WavTrajectory:
    """Read, predict the pulse for the remaining ΔG, pulse, repeat ``max_iter`` times.

    ``iters_to_window`` is the first iteration whose reading lies within
    ``window`` of the target (0 if the device already starts inside).
    """
    if state is None:
        state = set_conductance(new_device(params, seed), g_start)
    g = read_conductance(state)
    traj = WavTrajectory(g_target=float(g_target), g_start=g)
    if abs(g - g_target) <= window:
        traj.iters_to_window = 0
    for it in range(1, max_iter + 1):
        t = float(predictor.pulse_times(g, g_target - g)[0])
        _pulse(state, params, t, noisy)
        g = read_conductance(state)
        traj.records.append((it, t, g))
        if traj.iters_to_window is None and abs(g - g_target) <= window:
            traj.iters_to_window = it
    traj.converged_g = g
    return traj


def default_start_grid(params: DeviceParams, n: int = 13, margin: float = 0.05) -> np.ndarray:
    lo, hi = operational_range(params, margin)
    return np.linspace(lo, hi, n)


@dataclass
class WavSweepReport:
    g_targets: tuple
    g_starts: np.ndarray
    trajectories: dict  # (target_idx, start_idx, repeat) -> WavTrajectory
    window: float
    max_iter: int

    def converged(self, ti, si=None) -> np.ndarray:
        return np.array([tr.converged_g for (a, b, _), tr in sorted(self.trajectories.items())
                         if a == ti and (si is None or b == si)])

    def per_target(self) -> list[dict]:
        out = []
        for ti, tgt in enumerate(self.g_targets):
            trs = [tr for (a, _, _), tr in self.trajectories.items() if a == ti]
            conv = np.array([tr.converged_g for tr in trs])
            hit10 = np.mean([tr.iters_to_window is not None and tr.iters_to_window <= 10 for tr in trs])
            out.append({"g_target": tgt, "mean_converged": float(conv.mean()),
                        "std_converged": float(conv.std()),
                        "mean_abs_error": float(abs(conv.mean() - tgt)),
                        "frac_window_within_10": float(hit10), "runs": len(trs)})
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["g_target_uS", "g_start_uS", "mean_converged_uS", "std_converged_uS",
                        "repeats", "frac_window_within_10"])
            for ti, tgt in enumerate(self.g_targets):
                for si, g0 in enumerate(self.g_starts):
                    trs = [tr for (a, b, _), tr in sorted(self.trajectories.items()) if a == ti and b == si]
                    conv = np.array([tr.converged_g for tr in trs])
                    hit = np.mean([tr.iters_to_window is not None and tr.iters_to_window <= 10 for tr in trs])
                    w.writerow([tgt, repr(float(g0)), repr(float(conv.mean())), repr(float(conv.std())),
                                len(trs), hit])


def _wav_job(args):
    predictor, params, g0, tgt, max_iter, window, seed_seq = args
    return write_and_verify(predictor, params, g0, tgt, max_iter, window, seed_seq)


def wav_sweep(predictor, params: DeviceParams, g_start_grid=None, g_targets=None,
              repeats: int = 5, max_iter: int = 20, window: float = WINDOW_US,
              seed: int = 0, jobs: int = 1) -> WavSweepReport:
    """Write-and-verify from every grid start to every target, ``repeats`` devices each."""
    g_start_grid = default_start_grid(params) if g_start_grid is None else np.asarray(g_start_grid, float)
    g_targets = scaled_targets(params) if g_targets is None else tuple(float(t) for t in g_targets)
    keys, jobs_args = [], []
    for ti, tgt in enumerate(g_targets):
        for si, g0 in enumerate(g_start_grid):
            for r in range(repeats):
                keys.append((ti, si, r))
                jobs_args.append((predictor, params, float(g0), tgt, max_iter, window,
                                  child_seed(seed, 40, ti, si, r)))
    trs = parallel_map(_wav_job, jobs_args, jobs)
    return WavSweepReport(g_targets, g_start_grid, dict(zip(keys, trs)), window, max_iter)


# -- programming delay ------------------------------------------------------


@dataclass
class DelayResult:
    iterations: int | None  # None: cap reached without entering the window
    pulse_ns: float
    final_g: float


def _run_until_window(policy, params, state, g_target, window, cap, noisy=True) -> DelayResult:
    g = read_conductance(state)
    total = 0.0
    for it in range(cap + 1):
        if abs(g - g_target) <= window:
            return DelayResult(it, total, g)
        if it == cap:
            break
        t = policy(g, g_target - g)
        _pulse(state, params, t, noisy)
        total += params.steps_for(abs(t)) * params.dt
        g = read_conductance(state)
    return DelayResult(None, total, g)


def fixed_pulse_policy(pulse_ns: float = BASELINE_PULSE_NS):
    """Baseline: a fixed-length pulse in whichever direction the target lies."""
    def policy(g, delta_g):
        return pulse_ns if delta_g > 0 else -pulse_ns
    return policy


@dataclass
class DelayReport:
    rows: list  # dicts: g_target, g_start, repeat, method, iterations, pulse_ns, final_g
    window: float
    baseline_pulse_ns: float

    def mean_iterations(self, method, g_target) -> float:
        """Mean verify iterations; runs that hit the cap count as ``cap``."""
        vals = [r["iterations"] if r["iterations"] is not None else r["cap"]
                for r in self.rows if r["method"] == method and r["g_target"] == g_target]
        return float(np.mean(vals))

    def per_target(self) -> list[dict]:
        out = []
        for tgt in sorted({r["g_target"] for r in self.rows}):
            sub = [r for r in self.rows if r["g_target"] == tgt]
            entry = {"g_target": tgt}
            for m in ("predictor", "baseline"):
                rs = [r for r in sub if r["method"] == m]
                entry[f"{m}_mean_iterations"] = self.mean_iterations(m, tgt)
                entry[f"{m}_mean_pulse_ns"] = float(np.mean([r["pulse_ns"] for r in rs]))
                entry[f"{m}_nonconverged"] = sum(r["iterations"] is None for r in rs)
            out.append(entry)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["g_target_uS", "g_start_uS", "repeat", "method", "iterations",
                        "cumulative_pulse_ns", "final_g_uS", "converged"])
            for r in self.rows:
                w.writerow([r["g_target"], repr(r["g_start"]), r["repeat"], r["method"],
                            r["iterations"] if r["iterations"] is not None else r["cap"],
                            repr(r["pulse_ns"]), repr(r["final_g"]), r["iterations"] is not None])


def delay_benchmark(predictor, params: DeviceParams, g_targets=None, g_starts=None,
                    window: float = WINDOW_US, baseline_pulse_ns: float = BASELINE_PULSE_NS,
                    repeats: int = 3, cap: int = 1000, seed: int = 0,
                    noisy: bool = True) -> DelayReport:
    """Verify iterations and cumulative pulse time to enter ``target ± window``.

    Both methods start from identically seeded devices at each ``g_start``.
    """
    g_targets = scaled_targets(params) if g_targets is None else tuple(float(t) for t in g_targets)
    g_starts = default_start_grid(params) if g_starts is None else np.asarray(g_starts, float)
    baseline = fixed_pulse_policy(baseline_pulse_ns)

    def network_policy(g, d):
        return float(predictor.pulse_times(g, d)[0])

    rows = []
    for ti, tgt in enumerate(g_targets):
        for si, g0 in enumerate(g_starts):
            for r in range(repeats):
                for method, policy in (("predictor", network_policy), ("baseline", baseline)):
                    state = set_conductance(new_device(params, child_seed(seed, 50, ti, si, r)), g0)
                    res = _run_until_window(policy, params, state, tgt, window, cap, noisy)
                    rows.append({"g_target": tgt, "g_start": float(g0), "repeat": r, "method": method,
                                 "iterations": res.iterations, "pulse_ns": res.pulse_ns,
                                 "final_g": res.final_g, "cap": cap})
    return DelayReport(rows, window, baseline_pulse_ns)
