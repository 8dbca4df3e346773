"""Small fully connected regressor trained with hand-written backprop.

Maps normalised ``(g_start, δG)`` to a normalised signed pulse time. Hidden
layers use ReLU, the head is linear.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ParameterError
from .seeding import child_rng

log = logging.getLogger(__name__)

LAYER_SIZES = (2, 32, 64, 32, 1)


@dataclass
class Mlp:
    layer_sizes: tuple
    weights: list  # weights[i] has shape (layer_sizes[i], layer_sizes[i+1])
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ParameterError("weights/biases do not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ParameterError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
        if self.activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            weights=[np.array(w, dtype=np.float64).reshape(d["layer_sizes"][i], d["layer_sizes"][i + 1])
                     for i, w in enumerate(d["weights"])],
            biases=[np.array(b, dtype=np.float64) for b in d["biases"]],
            activation=d.get("activation", "relu"),
        )


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


def init_mlp(layer_sizes=LAYER_SIZES, seed: int = 0, activation: str = "relu") -> Mlp:
    """Uniform fan-in initialisation, ``U(-1/√fan_in, 1/√fan_in)`` for weights and biases."""
    rng = child_rng(seed, 10)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(tuple(layer_sizes), weights, biases, activation)


def zeros_like(mlp: Mlp) -> Mlp:
    return Mlp(mlp.layer_sizes, [np.zeros_like(w) for w in mlp.weights],
               [np.zeros_like(b) for b in mlp.biases], mlp.activation)


def forward(mlp: Mlp, x, return_cache: bool = False):
    """Network output for inputs ``x`` of shape ``(n, 2)`` (or a single pair).

    Returns a 1-D array of normalised times; with ``return_cache`` also the
    pre-activations and activations needed by :func:`backward`.
    """
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    act, _ = _ACTIVATIONS[mlp.activation]
    acts, pre = [a], []
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else act(z)
        acts.append(a)
    out = a[:, 0]
    if return_cache:
        return out, (acts, pre)
    return out


def predict_one(mlp: Mlp, g_start_norm: float, delta_g_norm: float) -> float:
    return float(forward(mlp, [[g_start_norm, delta_g_norm]])[0])


def backward(mlp: Mlp, cache, d_out) -> Mlp:
    """Gradients of a scalar loss given ``d_out = dL/d(output)`` per sample."""
    acts, pre = cache
    _, dact = _ACTIVATIONS[mlp.activation]
    grads = zeros_like(mlp)
    delta = np.asarray(d_out, dtype=np.float64).reshape(-1, 1)
    for i in range(len(mlp.weights) - 1, -1, -1):
        grads.weights[i] = acts[i].T @ delta
        grads.biases[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ mlp.weights[i].T) * dact(pre[i - 1])
    return grads


def mse_loss_and_grads(mlp: Mlp, x, y):
    """Mean squared error and its exact gradient w.r.t. every weight and bias."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        raise ParameterError("empty batch")
    out, cache = forward(mlp, x, return_cache=True)
    resid = out - y
    loss = float(np.mean(resid ** 2))
    return loss, backward(mlp, cache, 2.0 * resid / len(y))


@dataclass
class RpdReport:
    mean_rpd: float
    per_trial_rpd: np.ndarray
    frac_within_50pct: float
    n_excluded: int = 0

    def summary(self) -> dict:
        return {"mean_rpd": self.mean_rpd, "frac_within_50pct": self.frac_within_50pct,
                "n_trials": int(len(self.per_trial_rpd)), "n_excluded": self.n_excluded}


def rpd(outputs, targets) -> RpdReport:
    """Relative percentage difference, ``mean(|out − tgt| / tgt)``.

    Trials with a non-positive target are excluded and counted in
    ``n_excluded``. ``frac_within_50pct`` is the share of kept trials whose
    individual RPD is below 0.5.
    """
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if outputs.shape != targets.shape:
        raise ParameterError(f"length mismatch: {outputs.shape} vs {targets.shape}")
    keep = targets > 0
    per = np.abs(outputs[keep] - targets[keep]) / targets[keep]
    if per.size == 0:
        return RpdReport(float("nan"), per, float("nan"), int((~keep).sum()))
    return RpdReport(float(per.mean()), per, float(np.mean(per < 0.5)), int((~keep).sum()))


@dataclass
class SgdMomentum:
    lr: float = 1e-3
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    def step(self, mlp: Mlp, grads: Mlp) -> None:
        params, gparams = mlp.params(), grads.params()
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, gparams, self.velocity):
            v *= self.momentum
            v -= self.lr * g
            p += v


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    checkpoint_metric: str = "RPD_T"  # or "RPD_G"
    layer_sizes: tuple = LAYER_SIZES
    activation: str = "relu"

    def check(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if self.checkpoint_metric not in ("RPD_T", "RPD_G"):
            raise ParameterError(f"checkpoint_metric must be RPD_T or RPD_G, got {self.checkpoint_metric!r}")


def validation_metrics(mlp: Mlp, dataset, idx, bank=None) -> dict:
    """Validation RPD in time space and, through the recorded histories, in G space."""
    from .gtmap import HistoryBank

    x = dataset.inputs(idx)
    t_out = forward(mlp, x)
    rep_t = rpd(t_out, dataset.targets_t(idx))
    bank = bank if bank is not None else HistoryBank.from_dataset(dataset, idx)
    g_out, _ = bank.map_norm(t_out)
    rep_g = rpd(g_out, dataset.g_target[idx] / dataset.norm.g_ref)
    return {"RPD_T": rep_t.mean_rpd, "RPD_G": rep_g.mean_rpd,
            "frac_G": rep_g.frac_within_50pct}


def iterate_minibatches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def train(dataset, cfg: TrainConfig = TrainConfig(), mlp: Mlp | None = None):
    """Minibatch SGD with momentum on MSE between predicted and recorded normalised times.

    After every epoch the validation split is scored; the returned network is
    the epoch with the lowest validation ``cfg.checkpoint_metric`` (epoch 0 is
    the untrained network). Returns ``(best_mlp, history)``.
    """
    from .gtmap import HistoryBank

    cfg.check()
    mlp = init_mlp(cfg.layer_sizes, cfg.seed, cfg.activation) if mlp is None else mlp.copy()
    x_tr = dataset.inputs(dataset.train)
    y_tr = dataset.targets_t(dataset.train)
    val_bank = HistoryBank.from_dataset(dataset, dataset.val)
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum)

    metrics = validation_metrics(mlp, dataset, dataset.val, val_bank)
    history = [{"epoch": 0, "train_loss": float(np.mean((forward(mlp, x_tr) - y_tr) ** 2)), **metrics}]
    best, best_score, best_epoch = mlp.copy(), metrics[cfg.checkpoint_metric], 0
    for epoch in range(1, cfg.epochs + 1):
        rng = child_rng(cfg.seed, 11, epoch)
        total = 0.0
        for idx in iterate_minibatches(len(y_tr), cfg.batch_size, rng):
            loss, grads = mse_loss_and_grads(mlp, x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: loss is {loss}; lower the learning rate")
            opt.step(mlp, grads)
            total += loss * len(idx)
        if not mlp.is_finite():
            raise DivergenceError(f"epoch {epoch}: non-finite weights")
        metrics = validation_metrics(mlp, dataset, dataset.val, val_bank)
        history.append({"epoch": epoch, "train_loss": total / len(y_tr), **metrics})
        score = metrics[cfg.checkpoint_metric]
        if score < best_score:
            best, best_score, best_epoch = mlp.copy(), score, epoch
        log.debug("epoch %d loss %.3e %s", epoch, total / len(y_tr), metrics)
    for h in history:
        h["best"] = h["epoch"] == best_epoch
    return best, history


def save_checkpoint(path, mlp: Mlp, norm, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"model": mlp.to_dict(), "norm": asdict(norm), "provenance": provenance or {}}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    from .dataset import Norm

    doc = json.loads(Path(path).read_text())
    return Mlp.from_dict(doc["model"]), Norm(**doc["norm"]), doc.get("provenance", {})
