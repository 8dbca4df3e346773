"""Differentiable t→G lookup through recorded histories, and G-space fine-tuning.

A recorded history is treated as a piecewise-linear function of signed
pulse time. Outside the recorded interval the value saturates at the first
or last point while the backward pass reports a slope of exactly 1, which
keeps pulling stray predictions back toward the recorded region. Inside the
interval the slope of the active segment is used, clamped into ``[0, 1]``
(normalised units). At nodes the segment to the right (larger signed t)
applies.

Histories are stored here in ascending signed-time order, so a RESET
history (recorded at t = 0, −dt, −2dt, ...) is reversed. In that order G is
non-decreasing for both polarities, apart from noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DivergenceError, ParameterError
from .seeding import child_rng

log = logging.getLogger(__name__)


def moving_average(values, kernel: int) -> np.ndarray:
    """Centred moving average; near the edges the window is truncated to existing points.

    >>> moving_average([1.0, 2.0, 3.0, 4.0], 3)
    array([1.5, 2. , 3. , 3.5])
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ParameterError(f"kernel must be an odd integer >= 1, got {kernel}")
    v = np.asarray(values, dtype=np.float64)
    if kernel == 1 or v.size == 0:
        return v.copy()
    h = kernel // 2
    base = v[0]
    # offsetting by the first value keeps constant runs exact
    c = np.concatenate([[0.0], np.cumsum(v - base)])
    i = np.arange(v.size)
    lo = np.maximum(i - h, 0)
    hi = np.minimum(i + h + 1, v.size)
    return (c[hi] - c[lo]) / (hi - lo) + base


@dataclass
class SmoothedHistory:
    base: object  # dataset.Sample
    kernel: int
    g_smooth: np.ndarray  # recording order, same length as base.history
    dt: float


def smooth_history(sample, kernel: int, dt: float = 10.0) -> SmoothedHistory:
    return SmoothedHistory(sample, kernel, moving_average(sample.history, kernel), dt)


class HistoryBank:
    """Many histories, concatenated in ascending signed time, mapped in one vectorised call."""

    def __init__(self, values, offsets, t0, dt, g_ref, t_ref, kernel=1):
        self.values = np.asarray(values, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.t0 = np.asarray(t0, dtype=np.float64)  # signed time of the first ascending point
        self.dt = float(dt)
        self.g_ref = float(g_ref)
        self.t_ref = float(t_ref)
        self.kernel = kernel

    def __len__(self):
        return len(self.t0)

    @property
    def lengths(self):
        return np.diff(self.offsets)

    @classmethod
    def from_histories(cls, histories, signs, dt, g_ref, t_ref, kernel=1):
        vals, t0 = [], []
        for h, s in zip(histories, signs):
            h = moving_average(h, kernel)
            if s > 0:
                vals.append(h)
                t0.append(0.0)
            else:
                vals.append(h[::-1])
                t0.append(-(len(h) - 1) * dt)
        offsets = np.concatenate([[0], np.cumsum([len(v) for v in vals])])
        return cls(np.concatenate(vals) if vals else np.zeros(0), offsets, t0,
                   dt, g_ref, t_ref, kernel)

    @classmethod
    def from_dataset(cls, dataset, idx, kernel=1):
        idx = np.asarray(idx)
        return cls.from_histories((dataset.history(i) for i in idx), dataset.sign[idx],
                                  dataset.params.dt, dataset.norm.g_ref, dataset.norm.t_ref,
                                  kernel)

    @classmethod
    def from_smoothed(cls, sh: SmoothedHistory, norm):
        bank = cls.from_histories([sh.g_smooth], [sh.base.sign], sh.dt, norm.g_ref, norm.t_ref)
        bank.kernel = sh.kernel
        return bank

    def smoothed(self, kernel) -> "HistoryBank":
        """Re-smooth from the raw values (only valid on a kernel-1 bank)."""
        if self.kernel != 1:
            raise ParameterError("smooth a raw (kernel 1) bank")
        vals = np.concatenate([moving_average(self.values[a:b], kernel)
                               for a, b in zip(self.offsets[:-1], self.offsets[1:])]) \
            if len(self) else self.values.copy()
        return HistoryBank(vals, self.offsets, self.t0, self.dt, self.g_ref, self.t_ref, kernel)

    def subset(self, rows) -> "HistoryBank":
        rows = np.asarray(rows)
        vals = [self.values[self.offsets[r]:self.offsets[r + 1]] for r in rows]
        offsets = np.concatenate([[0], np.cumsum([len(v) for v in vals])])
        return HistoryBank(np.concatenate(vals), offsets, self.t0[rows], self.dt,
                           self.g_ref, self.t_ref, self.kernel)

    def map_ns(self, t_ns, rows=None):
        """Conductance (µS) at signed times ``t_ns`` plus slope dG/dt (µS/ns) for the backward pass.

        The returned slope is the raw segment slope inside the range and
        ``nan`` outside it; :meth:`map_norm` turns it into the clamped gradient.
        """
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        t = np.asarray(t_ns, dtype=np.float64)
        start = self.offsets[rows]
        last = self.lengths[rows] - 1
        p = (t - self.t0[rows]) / self.dt
        # normalise/denormalise round trips land a hair off the grid; snap so nodes pick the right segment
        near = np.round(p)
        p = np.where(np.abs(p - near) <= 1e-9 * np.maximum(1.0, np.abs(near)), near, p)
        below, above = p < 0, p >= last
        inside = ~(below | above)
        j = np.clip(np.floor(p), 0, np.maximum(last - 1, 0)).astype(np.int64)
        j = np.where(inside, j, 0)
        frac = np.where(inside, p - j, 0.0)
        v0 = self.values[start + j]
        v1 = self.values[np.minimum(start + j + 1, start + last)]
        g = np.where(inside, v0 + frac * (v1 - v0), 0.0)
        g = np.where(below, self.values[start], g)
        g = np.where(above, self.values[start + last], g)
        slope = np.where(inside, (v1 - v0) / self.dt, np.nan)
        return g, slope

    def map_norm(self, t_norm, rows=None):
        """Normalised G and the clamped normalised gradient dG_norm/dt_norm."""
        t_ns = (np.asarray(t_norm, dtype=np.float64) - 0.5) * 2.0 * self.t_ref
        g, slope = self.map_ns(t_ns, rows)
        grad = slope * (2.0 * self.t_ref / self.g_ref)
        grad = np.where(np.isnan(grad), 1.0, np.clip(grad, 0.0, 1.0))
        return g / self.g_ref, grad


def map_t_to_g(sh: SmoothedHistory, t_norm, norm):
    """Normalised conductance reached after normalised pulse time ``t_norm``."""
    g, _ = HistoryBank.from_smoothed(sh, norm).map_norm(np.atleast_1d(t_norm))
    return g[0] if np.ndim(t_norm) == 0 else g


def map_t_to_g_grad(sh: SmoothedHistory, t_norm, norm):
    """Gradient used by the backward pass of :func:`map_t_to_g` (normalised units)."""
    _, grad = HistoryBank.from_smoothed(sh, norm).map_norm(np.atleast_1d(t_norm))
    return grad[0] if np.ndim(t_norm) == 0 else grad


def map_t_to_g_raw_slope(sh: SmoothedHistory, t_norm, norm):
    """Unclamped segment slope in normalised units (``nan`` outside the recorded range)."""
    bank = HistoryBank.from_smoothed(sh, norm)
    t_ns = (np.atleast_1d(np.asarray(t_norm, dtype=np.float64)) - 0.5) * 2.0 * norm.t_ref
    _, slope = bank.map_ns(t_ns)
    out = slope * (2.0 * norm.t_ref / norm.g_ref)
    return out[0] if np.ndim(t_norm) == 0 else out


@dataclass(frozen=True)
class KernelSchedule:
    stages: tuple = ((1001, 50), (101, 50), (11, 50), (1, 50))

    def __post_init__(self):
        stages = tuple((int(k), int(e)) for k, e in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ParameterError("schedule needs at least one stage")
        kernels = [k for k, _ in stages]
        if any(k < 1 or k % 2 == 0 for k in kernels):
            raise ParameterError(f"kernel sizes must be odd and >= 1: {kernels}")
        if any(a <= b for a, b in zip(kernels, kernels[1:])):
            raise ParameterError(f"kernel sizes must be strictly decreasing: {kernels}")
        if any(e < 0 for _, e in stages):
            raise ParameterError("stage epochs must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "KernelSchedule":
        """``"1001:50,101:50,11:50,1:50"`` → schedule."""
        try:
            stages = [tuple(int(v) for v in part.split(":")) for part in text.split(",") if part.strip()]
            if any(len(s) != 2 for s in stages):
                raise ValueError
        except ValueError:
            raise ParameterError(f"bad schedule {text!r}; expected kernel:epochs[,kernel:epochs...]") from None
        return cls(tuple(stages))

    def __str__(self):
        return ",".join(f"{k}:{e}" for k, e in self.stages)


@dataclass(frozen=True)
class FinetuneConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0


def g_loss_and_grads(mlp, x, bank: HistoryBank, rows, g_target_norm):
    """MSE between mapped and target conductance, backpropagated through the custom gradient."""
    t_out, cache = nn.forward(mlp, x, return_cache=True)
    g_out, dg_dt = bank.map_norm(t_out, rows)
    resid = g_out - g_target_norm
    loss = float(np.mean(resid ** 2))
    return loss, nn.backward(mlp, cache, 2.0 * resid * dg_dt / len(resid))


def finetune(mlp, dataset, schedule: KernelSchedule = KernelSchedule(),
             cfg: FinetuneConfig = FinetuneConfig()):
    """Train on G-space loss through the smoothed histories, one stage per kernel size.

    Validation always maps through the raw (kernel 1) histories. The input
    network is the first checkpoint candidate, so the result is never worse
    on validation RPD_G. Returns ``(best_mlp, history)``.
    """
    mlp = mlp.copy()
    x_tr = dataset.inputs(dataset.train)
    g_tr = dataset.g_target[dataset.train] / dataset.norm.g_ref
    raw_train = HistoryBank.from_dataset(dataset, dataset.train)
    val_bank = HistoryBank.from_dataset(dataset, dataset.val)

    m = nn.validation_metrics(mlp, dataset, dataset.val, val_bank)
    history = [{"stage": 0, "kernel": None, "epoch": 0, "train_loss": float("nan"), **m}]
    best, best_score, best_at = mlp.copy(), m["RPD_G"], (0, 0)
    opt = nn.SgdMomentum(cfg.learning_rate, cfg.momentum)
    for s, (kernel, epochs) in enumerate(schedule.stages, start=1):
        bank = raw_train.smoothed(kernel) if kernel > 1 else raw_train
        for epoch in range(1, epochs + 1):
            rng = child_rng(cfg.seed, 20, s, epoch)
            total = 0.0
            for idx in nn.iterate_minibatches(len(g_tr), cfg.batch_size, rng):
                loss, grads = g_loss_and_grads(mlp, x_tr[idx], bank, idx, g_tr[idx])
                if not np.isfinite(loss):
                    raise DivergenceError(f"finetune stage {s} (kernel {kernel}) epoch {epoch}: loss {loss}")
                opt.step(mlp, grads)
                total += loss * len(idx)
            if not mlp.is_finite():
                raise DivergenceError(f"finetune stage {s} (kernel {kernel}) epoch {epoch}: non-finite weights")
            m = nn.validation_metrics(mlp, dataset, dataset.val, val_bank)
            history.append({"stage": s, "kernel": kernel, "epoch": epoch,
                            "train_loss": total / len(g_tr), **m})
            if m["RPD_G"] < best_score:
                best, best_score, best_at = mlp.copy(), m["RPD_G"], (s, epoch)
        log.info("finetune stage %d kernel %d: best val RPD_G so far %.4f", s, kernel, best_score)
    for h in history:
        h["best"] = (h["stage"], h["epoch"]) == best_at
    return best, history
