"""End-to-end acceptance checks on the default configuration.

One session-scoped pipeline run (10,000 samples, 100 training epochs, the
1001/101/11/1 × 50 fine-tuning schedule) feeds criteria 1–4 and 8. Each
test prints a single PASS/FAIL line; the lines are repeated in the terminal
summary.
"""

import json
import time

import numpy as np
import pytest

from memprog import nn
from memprog.config import RunConfig, override
from memprog.dataset import Dataset, generate_dataset
from memprog.device import DeviceParams, Polarity, apply_pulse, full_transit_steps, new_device, \
    read_conductance, run_steps, set_conductance
from memprog.evaluation import NetworkPredictor, one_shot_eval
from memprog.gtmap import HistoryBank, map_t_to_g, map_t_to_g_raw_slope, smooth_history
from memprog.nn import LAYER_SIZES, init_mlp, load_checkpoint
from memprog.oracle import oracle_pulse_time
from memprog.pipeline import run_pipeline

RESULTS = []
RUNTIME_BUDGET_S = 15 * 60


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    cfg = override(RunConfig(), {"out": str(out)})
    t0 = time.perf_counter()
    manifest = run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    return cfg, out, manifest, elapsed


def _summary(out, name):
    return json.loads((out / name).read_text())


def _oneshot(cfg, out, which, mlp=None):
    if mlp is None:
        mlp, norm, _ = load_checkpoint(out / f"model_{which}.json")
    else:
        norm = Dataset.load(out / "dataset").norm
    pred = NetworkPredictor(mlp, norm, which)
    return one_shot_eval(pred, cfg.device, cfg.eval.n_trials, cfg.seed_for("eval"))


def test_criterion_1_one_shot_accuracy(run):
    cfg, out, _, elapsed = run
    s = _summary(out, "oneshot_summary.json")
    ok = s["n_trials"] == 1000 and s["frac_within_50pct"] >= 0.90 and elapsed < RUNTIME_BUDGET_S
    report(1, ok, f"fine-tuned frac(RPD<50%)={s['frac_within_50pct']:.3f} (>=0.90), "
                  f"mean RPD={s['mean_rpd']:.4f}, pipeline {elapsed:.0f}s (<{RUNTIME_BUDGET_S}s)")


def test_criterion_2_finetune_ordering(run):
    cfg, out, _, _ = run
    fine = _oneshot(cfg, out, "finetuned")
    scratch = _oneshot(cfg, out, "scratch")
    untrained = _oneshot(cfg, out, "untrained", init_mlp(LAYER_SIZES, cfg.seed_for("train")))
    ratio = untrained.mean_rpd / scratch.mean_rpd
    ok_a = fine.frac_within_50pct > scratch.frac_within_50pct
    ok_b = ratio >= 10.0
    report(2, ok_a and ok_b,
           f"(a) frac fine-tuned={fine.frac_within_50pct:.3f} > scratch={scratch.frac_within_50pct:.3f}: "
           f"{'ok' if ok_a else 'no'}; (b) untrained/scratch mean RPD = "
           f"{untrained.mean_rpd:.4f}/{scratch.mean_rpd:.4f} = {ratio:.2f}x (>=10x): {'ok' if ok_b else 'no'}; "
           f"fine-tuned mean RPD={fine.mean_rpd:.4f}")


def test_criterion_3_write_and_verify(run):
    _, out, _, _ = run
    per = _summary(out, "wav_sweep_summary.json")["per_target"]
    ok = all(p["frac_window_within_10"] >= 0.90 and p["mean_abs_error"] <= 25.0 for p in per)
    detail = "; ".join(f"{p['g_target']:.0f}uS: window<=10 {p['frac_window_within_10']:.2f}, "
                       f"|mean-target|={p['mean_abs_error']:.1f}" for p in per)
    report(3, ok, detail)


def test_criterion_4_delay_ordering(run):
    _, out, _, _ = run
    per = _summary(out, "delay_summary.json")["per_target"]
    ok = all(p["predictor_mean_iterations"] < p["baseline_mean_iterations"] for p in per)
    detail = "; ".join(f"{p['g_target']:.0f}uS: {p['predictor_mean_iterations']:.2f} vs "
                       f"{p['baseline_mean_iterations']:.2f}" for p in per)
    report(4, ok, f"predictor vs 500 ns baseline iterations: {detail}")


# -- criterion 5 ---------------------------------------------------------------------


def _draw_params(rng):
    g_min = rng.uniform(5.0, 100.0)
    g_max = g_min * rng.uniform(3.0, 20.0)
    k_set = rng.uniform(2e-5, 1e-3)
    return DeviceParams(g_min_nominal=g_min, g_max_nominal=g_max, k_set=k_set,
                        k_reset=k_set * rng.uniform(0.5, 4.0), eps_floor=rng.uniform(0.002, 0.05),
                        sigma_rate=rng.uniform(0, 0.02), sigma_bound=rng.uniform(0, 0.01) * g_max)


def _device_properties(p, rng):
    clean = p.without_noise()
    failures = []
    for pol in (Polarity.SET, Polarity.RESET):
        s = new_device(clean, 0)
        s.x = rng.uniform(0.001, 0.999)
        g = np.concatenate([[read_conductance(s)], run_steps(s, clean, pol, 300, noisy=False)])
        if not np.all(np.diff(g) * int(pol) >= 0):
            failures.append("monotonicity")
    a, b = (int(v) for v in rng.integers(0, 300, 2))
    one, two = new_device(clean, 0), new_device(clean, 0)
    one.x = two.x = rng.uniform()
    apply_pulse(one, clean, Polarity.SET, a * clean.dt)
    apply_pulse(one, clean, Polarity.SET, b * clean.dt)
    apply_pulse(two, clean, Polarity.SET, (a + b) * clean.dt)
    if not one.same_as(two):
        failures.append("additivity")
    s = new_device(clean, 0)
    s.x = 0.01
    g = np.concatenate([[read_conductance(s)],
                        run_steps(s, clean, Polarity.SET, full_transit_steps(clean) + 10, noisy=False)])
    inc = np.diff(g)
    m = int(np.argmax(inc))
    tol = 1e-12 * clean.g_range
    if not (0 < m < len(inc) - 1 and np.all(np.diff(inc[:m + 1]) >= -tol) and np.all(np.diff(inc[m:]) <= tol)):
        failures.append("s-shape")
    s = new_device(p, int(rng.integers(2**32)))
    for _ in range(6):
        run_steps(s, p, Polarity(int(rng.choice([1, -1]))), int(rng.integers(0, 300)))
        if not (s.g_min_t <= read_conductance(s) <= s.g_max_t):
            failures.append("confinement")
            break

    def inc_at(x0, pol):
        d = new_device(clean, 0)
        d.x = x0
        g0 = read_conductance(d)
        run_steps(d, clean, pol, 1, noisy=False)
        return abs(read_conductance(d) - g0)

    for pol in (Polarity.SET, Polarity.RESET):
        if not inc_at(0.02, pol) < inc_at(0.5, pol) > inc_at(0.98, pol):
            failures.append("slow-near-boundary")
    return failures


def test_criterion_5_device_properties():
    rng = np.random.default_rng(2024)
    n_draws, failed = 200, {}
    for i in range(n_draws):
        for f in _device_properties(_draw_params(rng), rng):
            failed[f] = failed.get(f, 0) + 1
    report(5, not failed, f"{n_draws} parameter draws x 5 properties, failures: {failed or 'none'}")


# -- criterion 6 ---------------------------------------------------------------------


def _mlp_fd_error(sizes, seed, h=1e-5):
    m = init_mlp(sizes, seed)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(size=(8, 2)), rng.uniform(size=8)
    _, (_, pre) = nn.forward(m, x, return_cache=True)
    if len(pre) > 1 and min(np.abs(z).min() for z in pre[:-1]) < 1e-3:
        return None  # too close to a ReLU kink for a central difference
    _, grads = nn.mse_loss_and_grads(m, x, y)
    worst = 0.0
    for p, g in zip(m.params(), grads.params()):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            lp = nn.mse_loss_and_grads(m, x, y)[0]
            p[i] = old - h
            lm = nn.mse_loss_and_grads(m, x, y)[0]
            p[i] = old
            num[i] = (lp - lm) / (2 * h)
        scale = max(np.linalg.norm(g), np.linalg.norm(num))
        if scale > 0:
            worst = max(worst, np.linalg.norm(g - num) / scale)
    return worst


def test_criterion_6_gradients(run):
    errs = [e for sizes in [(2, 1), (2, 4, 1), (2, 3, 3, 1), (2, 4, 4, 1)] for seed in range(10)
            if (e := _mlp_fd_error(sizes, seed)) is not None]
    ok_a = len(errs) >= 30 and max(errs) <= 1e-4

    _, out, _, _ = run
    ds = Dataset.load(out / "dataset")
    h, worst_b = 1e-7, 0.0
    for i in range(0, len(ds), 50):
        s = ds.sample(i)
        for kernel in (1, 11, 101, 1001):
            sh = smooth_history(s, kernel)
            k = np.arange(len(s.history) - 1) + np.random.default_rng(i).uniform(0.2, 0.8)
            t = 0.5 + 0.5 * s.sign * k * ds.params.dt / ds.norm.t_ref
            fd = (map_t_to_g(sh, t + h, ds.norm) - map_t_to_g(sh, t - h, ds.norm)) / (2 * h)
            worst_b = max(worst_b, float(np.max(np.abs(fd - map_t_to_g_raw_slope(sh, t, ds.norm)))))
    ok_b = worst_b <= 1e-6

    bank = HistoryBank.from_dataset(ds, np.arange(len(ds)))
    first = bank.t0
    last = bank.t0 + (bank.lengths - 1) * bank.dt
    ok_c = True
    for t in (first - bank.dt, last + bank.dt, first - 10 * bank.t_ref, last + 10 * bank.t_ref):
        ok_c &= bool(np.all(bank.map_norm(0.5 + 0.5 * t / bank.t_ref)[1] == 1.0))
    report(6, ok_a and ok_b and ok_c,
           f"(a) MLP max rel err {max(errs):.2e} over {len(errs)} nets (<=1e-4); "
           f"(b) map FD max abs err {worst_b:.2e} (<=1e-6); (c) out-of-range grad == 1 on "
           f"{len(ds)} histories, both ends: {ok_c}")


def test_criterion_7_oracle_round_trip():
    p = DeviceParams().without_noise()
    grid = np.linspace(p.g_min_nominal + 0.05 * p.g_range, p.g_max_nominal - 0.05 * p.g_range, 20)
    misses = 0
    for g0 in grid:
        for g1 in grid:
            r = oracle_pulse_time(p, g0, g1 - g0)
            s = set_conductance(new_device(p, 0), g0)
            if r.t:
                apply_pulse(s, p, Polarity.SET if r.t > 0 else Polarity.RESET, abs(r.t), noisy=False)
            misses += abs(read_conductance(s) - g1) > 0.5
    report(7, misses == 0, f"{400 - misses}/400 cells land within 0.5 uS")


def test_criterion_8_dataset_invariants(run):
    cfg, out, _, _ = run
    ds = Dataset.load(out / "dataset")
    sign_bad = int(np.sum(np.sign(ds.t_pulse) != np.sign(ds.g_target - ds.g_start)))
    straddle_bad = 0
    for i in range(len(ds)):
        h = ds.history(i)
        n = int(round(abs(ds.t_pulse[i]) / ds.params.dt))
        pairs = [(h[n - 1], h[n])] + ([(h[n], h[n + 1])] if n + 1 < len(h) else [])
        if len(h) != 2 * n + 1 or not any((a - ds.g_target[i]) * (b - ds.g_target[i]) <= 0 for a, b in pairs):
            straddle_bad += 1
    rate = ds.meta["rejection_rate"]
    split = (len(ds.train), len(ds.val), len(ds.test))
    again = generate_dataset(cfg.device, cfg.dataset.n, cfg.seed_for("dataset"))
    identical = again.to_bytes() == (out / "dataset.samples.bin").read_bytes()
    ok = sign_bad == 0 and straddle_bad == 0 and rate < 0.05 and split == (8000, 1000, 1000) and identical
    report(8, ok, f"sign violations {sign_bad}, straddle violations {straddle_bad}, rejection rate "
                  f"{rate:.2%}, split {split}, byte-identical regeneration {identical}")
