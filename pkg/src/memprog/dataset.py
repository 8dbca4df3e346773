"""Pulse-time training corpus.

Each sample starts a fresh noisy device at a random conductance, picks a
random target, and pulses in the target's direction one quantum at a time
until two consecutive readings lie on opposite sides of the target. The
reading closer to the target becomes ``g_end`` and the elapsed signed time
``t_pulse``. Pulsing then continues so that the stored G–t history spans
``2·|t_pulse|``.

Histories are kept concatenated (``hist_values`` + ``hist_offsets``); entry
``k`` of a history is the conductance after ``k`` quanta, i.e. at signed time
``sign(t_pulse)·k·dt``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from ._parallel import parallel_map
from .device import DeviceParams, Polarity, full_transit_steps, new_device, read_conductance, set_conductance
from .errors import ConfigError, MemprogError, ParameterError
from .seeding import child_rng

log = logging.getLogger(__name__)

MAGIC = b"MEMPROG-DS\x00\x01"
_CHUNK = 2048
_EMPTY_NOISE = np.zeros((0, 3))


class DatasetFileError(MemprogError):
    """Dataset files are missing, truncated, or fail their checksum."""


class SampleRejected(Exception):
    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 10_000
    margin: float = 0.05  # fraction of the nominal range excluded at each end
    min_gap: float = 1.0  # µS
    cap_factor: float = 2.0  # step cap, in units of a full noise-free transit

    def check(self):
        if self.n < 10:
            raise ParameterError(f"dataset needs n >= 10, got {self.n}")
        if not 0 <= self.margin < 0.5:
            raise ParameterError(f"margin must be in [0, 0.5), got {self.margin}")
        if self.min_gap <= 0 or self.cap_factor <= 0:
            raise ParameterError("min_gap and cap_factor must be > 0")


def operational_range(params: DeviceParams, margin: float = 0.05) -> tuple[float, float]:
    m = margin * params.g_range
    return params.g_min_nominal + m, params.g_max_nominal - m


@dataclass(frozen=True)
class Norm:
    g_ref: float
    t_ref: float


def normalize(value, kind: str, norm: Norm):
    """G ↦ G/g_ref; signed t ↦ 0.5 + 0.5·t/t_ref."""
    if kind == "G":
        return value / norm.g_ref
    if kind == "T":
        return 0.5 + 0.5 * (value / norm.t_ref)
    raise ParameterError(f"unknown quantity kind {kind!r}")


def denormalize(value, kind: str, norm: Norm):
    if kind == "G":
        return value * norm.g_ref
    if kind == "T":
        return (value - 0.5) * 2.0 * norm.t_ref
    raise ParameterError(f"unknown quantity kind {kind!r}")


@dataclass
class Sample:
    g_start: float
    g_target: float
    g_end: float
    t_pulse: float  # signed ns
    history: np.ndarray  # G after 0, 1, ..., 2|n| quanta

    @property
    def sign(self) -> int:
        return 1 if self.t_pulse > 0 else -1

    @property
    def delta_g(self) -> float:
        return self.g_target - self.g_start

    def times(self, dt: float) -> np.ndarray:
        return self.sign * dt * np.arange(len(self.history))


class _NoiseStream:
    """Noise rows drawn from the device's generator in fixed-size chunks."""

    def __init__(self, state, params):
        self.state = state
        self.scale = np.array([params.sigma_rate, params.sigma_bound, params.sigma_bound])
        self.noisy = params.noisy
        self.buf = _EMPTY_NOISE
        self.pos = 0

    def take(self, n):
        if not self.noisy:
            return _EMPTY_NOISE
        if self.pos >= len(self.buf):
            self.buf = self.state.rng.standard_normal((_CHUNK, 3)) * self.scale
            self.pos = 0
        rows = self.buf[self.pos:self.pos + n]
        return rows

    def consume(self, n):
        self.pos += n


def generate_sample(params: DeviceParams, rng: np.random.Generator,
                    cfg: DatasetConfig = DatasetConfig()) -> Sample:
    """One sample; raises :class:`SampleRejected` if no straddle occurs within the cap."""
    lo, hi = operational_range(params, cfg.margin)
    while True:
        g_start, g_target = rng.uniform(lo, hi, size=2)
        if abs(g_target - g_start) >= cfg.min_gap:
            break
    state = new_device(params, rng)
    set_conductance(state, g_start)
    g_start = read_conductance(state)
    polarity = Polarity.for_delta(g_target - g_start)
    rate = params.step_rate(polarity)
    bands = params.bands()
    cap = int(cfg.cap_factor * full_transit_steps(params))

    arr = state.as_array()
    noise = _NoiseStream(state, params)
    trace = np.empty(cap + 1)
    trace[0] = g_start
    k = 0

    def step(n, stop):
        nonlocal k
        while n > 0:
            rows = noise.take(n)
            m = min(n, _CHUNK) if not params.noisy else len(rows)
            done = kernels.advance(arr, rate, params.eps_floor, rows, m, bands,
                                   trace[k + 1:k + 1 + m], g_target, stop)
            noise.consume(done)
            k += done
            n -= done
            if stop and done < m:
                return True
            if stop and done and (trace[k - 1] - g_target) * (trace[k] - g_target) <= 0:
                return True
        return False

    if not step(cap, True):
        raise SampleRejected("cap")
    before, after = trace[k - 1], trace[k]
    n = k - 1 if abs(before - g_target) < abs(after - g_target) else k
    if n == 0:
        raise SampleRejected("immediate")
    if 2 * n > cap:
        trace = np.concatenate([trace, np.empty(2 * n - cap)])
    step(2 * n - k, False)
    history = trace[:2 * n + 1].copy()
    return Sample(
        g_start=float(g_start),
        g_target=float(g_target),
        g_end=float(history[n]),
        t_pulse=float(int(polarity) * n * params.dt),
        history=history,
    )


def _generate_range(args):
    params, cfg, seed, indices = args
    out = []
    for i in indices:
        rejected = []
        attempt = 0
        while True:
            try:
                s = generate_sample(params, child_rng(seed, 1, i, attempt), cfg)
                break
            except SampleRejected as exc:
                rejected.append(exc.reason)
                attempt += 1
                if attempt > 50:
                    raise ConfigError(
                        f"sample {i}: 50 consecutive rejections ({rejected[-1]}); "
                        "operational range and noise levels do not match"
                    ) from None
        out.append((s, rejected))
    return out


class Dataset:
    """Samples in columnar form plus split indices and normalisation constants."""

    def __init__(self, g_start, g_target, g_end, t_pulse, hist_offsets, hist_values,
                 train, val, test, norm: Norm, params: DeviceParams, meta=None):
        self.g_start = np.asarray(g_start, dtype=np.float64)
        self.g_target = np.asarray(g_target, dtype=np.float64)
        self.g_end = np.asarray(g_end, dtype=np.float64)
        self.t_pulse = np.asarray(t_pulse, dtype=np.float64)
        self.hist_offsets = np.asarray(hist_offsets, dtype=np.int64)
        self.hist_values = np.asarray(hist_values, dtype=np.float64)
        self.train = np.asarray(train, dtype=np.int64)
        self.val = np.asarray(val, dtype=np.int64)
        self.test = np.asarray(test, dtype=np.int64)
        self.norm = norm
        self.params = params
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.g_start)

    @property
    def delta_g(self):
        return self.g_target - self.g_start

    @property
    def sign(self):
        return np.where(self.t_pulse > 0, 1, -1)

    def history(self, i) -> np.ndarray:
        return self.hist_values[self.hist_offsets[i]:self.hist_offsets[i + 1]]

    def sample(self, i) -> Sample:
        return Sample(float(self.g_start[i]), float(self.g_target[i]), float(self.g_end[i]),
                      float(self.t_pulse[i]), self.history(i))

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def inputs(self, idx=None) -> np.ndarray:
        """Normalised network inputs ``(g_start, δG)`` as an ``(n, 2)`` array."""
        idx = slice(None) if idx is None else idx
        return np.column_stack([
            normalize(self.g_start[idx], "G", self.norm),
            normalize(self.delta_g[idx], "G", self.norm),
        ])

    def targets_t(self, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return normalize(self.t_pulse[idx], "T", self.norm)

    # -- persistence ---------------------------------------------------

    _ARRAYS = ("g_start", "g_target", "g_end", "t_pulse", "hist_offsets", "hist_values",
               "train", "val", "test")

    def to_bytes(self) -> bytes:
        parts = [MAGIC]
        for name in self._ARRAYS:
            a = getattr(self, name)
            parts.append(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes())
        return b"".join(parts)

    def save(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        blob = self.to_bytes()
        bin_path = prefix.with_name(prefix.name + ".samples.bin")
        meta_path = prefix.with_name(prefix.name + ".meta.json")
        bin_path.write_bytes(blob)
        meta = dict(self.meta)
        meta.update(
            n=len(self),
            n_hist=int(len(self.hist_values)),
            split={"train": len(self.train), "val": len(self.val), "test": len(self.test)},
            norm=asdict(self.norm),
            device=asdict(self.params),
            sha256=hashlib.sha256(blob).hexdigest(),
        )
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return meta_path, bin_path

    @classmethod
    def load(cls, prefix) -> "Dataset":
        prefix = Path(prefix)
        meta_path = prefix.with_name(prefix.name + ".meta.json")
        bin_path = prefix.with_name(prefix.name + ".samples.bin")
        try:
            meta = json.loads(meta_path.read_text())
            blob = bin_path.read_bytes()
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetFileError(f"cannot read dataset {prefix}: {exc}") from exc
        if not blob.startswith(MAGIC):
            raise DatasetFileError(f"{bin_path}: not a dataset file (bad magic)")
        if hashlib.sha256(blob).hexdigest() != meta.get("sha256"):
            raise DatasetFileError(f"{bin_path}: checksum mismatch, file is corrupt")
        try:
            n, n_hist, sp = meta["n"], meta["n_hist"], meta["split"]
            lengths = {"hist_offsets": n + 1, "hist_values": n_hist,
                       "train": sp["train"], "val": sp["val"], "test": sp["test"]}
            arrays, pos = {}, len(MAGIC)
            for name in cls._ARRAYS:
                count = lengths.get(name, n)
                dtype = np.dtype("<i8") if name in ("hist_offsets", "train", "val", "test") else np.dtype("<f8")
                arrays[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).astype(dtype.newbyteorder("="))
                pos += count * dtype.itemsize
            if pos != len(blob):
                raise ValueError("trailing bytes")
            params = DeviceParams(**meta["device"])
            norm = Norm(**meta["norm"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFileError(f"{bin_path}: malformed dataset ({exc})") from exc
        extra = {k: v for k, v in meta.items()
                 if k not in ("n", "n_hist", "split", "norm", "device", "sha256")}
        return cls(**arrays, norm=norm, params=params, meta=extra)

    def export_csv(self, path) -> Path:
        path = Path(path)
        split_name = np.empty(len(self), dtype=object)
        for name in ("train", "val", "test"):
            split_name[self.split(name)] = name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "split", "g_start_uS", "g_target_uS", "g_end_uS",
                        "t_pulse_ns", "history_len"])
            for i in range(len(self)):
                w.writerow([i, split_name[i], repr(self.g_start[i]), repr(self.g_target[i]),
                            repr(self.g_end[i]), repr(self.t_pulse[i]),
                            int(self.hist_offsets[i + 1] - self.hist_offsets[i])])
        return path


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 80/10/10 partition of ``range(n)``."""
    perm = child_rng(seed, 2).permutation(n)
    n_train, n_val = n * 8 // 10, n // 10
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def generate_dataset(params: DeviceParams, n: int = 10_000, seed: int = 42,
                     cfg: DatasetConfig | None = None, jobs: int = 1) -> Dataset:
    cfg = DatasetConfig(n=n) if cfg is None else cfg
    if cfg.n != n:
        cfg = DatasetConfig(n=n, margin=cfg.margin, min_gap=cfg.min_gap, cap_factor=cfg.cap_factor)
    cfg.check()

    chunks = [range(s, min(s + 256, n)) for s in range(0, n, 256)]
    parts = parallel_map(_generate_range, [(params, cfg, seed, c) for c in chunks], jobs)
    results = [r for part in parts for r in part]

    reasons = {}
    for _, rej in results:
        for r in rej:
            reasons[r] = reasons.get(r, 0) + 1
    n_rejected = sum(reasons.values())
    rate = n_rejected / (n + n_rejected)
    if rate > 0.5:
        raise ConfigError(f"rejection rate {rate:.1%} > 50%: range/noise mismatch")
    if n_rejected:
        log.info("dataset: %d rejected attempts (%s)", n_rejected, reasons)

    samples = [s for s, _ in results]
    lengths = np.array([len(s.history) for s in samples], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    train, val, test = split_indices(n, seed)
    t_pulse = np.array([s.t_pulse for s in samples])
    norm = Norm(g_ref=float(params.g_max_nominal), t_ref=float(np.max(np.abs(t_pulse[train]))))
    return Dataset(
        g_start=[s.g_start for s in samples],
        g_target=[s.g_target for s in samples],
        g_end=[s.g_end for s in samples],
        t_pulse=t_pulse,
        hist_offsets=offsets,
        hist_values=np.concatenate([s.history for s in samples]),
        train=train, val=val, test=test,
        norm=norm, params=params,
        meta={"seed": int(seed), "config": asdict(cfg), "rejected": n_rejected,
              "rejection_reasons": dict(sorted(reasons.items())),
              "rejection_rate": rate},
    )
