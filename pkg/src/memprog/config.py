"""Run configuration: one JSON document, one section per stage family.

Every field has a default and unknown keys are rejected. Section seeds set
to ``null`` fall back to the master seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .device import DeviceParams
from .errors import ConfigError, MemprogError
from .oracle import OracleConfig

STAGES = (
    "device.switching-curve",
    "dataset",
    "train",
    "finetune",
    "eval.oneshot",
    "eval.wav",
    "eval.wav-sweep",
    "eval.delay-bench",
)


@dataclass(frozen=True)
class SwitchingCurveSection:
    n_pulses: int = 6000
    n_devices: int = 10
    polarity: str = "SET"
    noisy: bool = True
    seed: int | None = None


@dataclass(frozen=True)
class DatasetSection:
    n: int = 10_000
    margin: float = 0.05
    min_gap: float = 1.0
    cap_factor: float = 2.0
    export_csv: bool = True
    seed: int | None = None


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    checkpoint_metric: str = "RPD_T"
    seed: int | None = None


@dataclass(frozen=True)
class FinetuneSection:
    schedule: str = "1001:50,101:50,11:50,1:50"
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int | None = None


@dataclass(frozen=True)
class EvalSection:
    predictor: str = "finetuned"  # finetuned | scratch | oracle
    n_trials: int = 1000
    window: float = 50.0
    max_iter: int = 20
    repeats: int = 5
    grid_points: int = 13
    targets: tuple = (100.0, 220.0, 340.0)  # on the 50–400 µS reference range
    baseline_pulse_ns: float = 500.0
    delay_repeats: int = 3
    delay_cap: int = 1000
    wav_g_start: float = 100.0
    wav_g_target: float = 220.0
    seed: int | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    out: str = "runs/default"
    stages: tuple = STAGES
    device: DeviceParams = field(default_factory=DeviceParams)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    switching_curve: SwitchingCurveSection = field(default_factory=SwitchingCurveSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def seed_for(self, section: str) -> int:
        s = getattr(self, section).seed
        return self.seed if s is None else s

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def section_dict(self, name) -> dict:
        d = asdict(getattr(self, name))
        if "seed" in d:
            d["seed"] = self.seed_for(name)
        return json.loads(json.dumps(d))


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}.{name}: expected a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except MemprogError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "config")
    bad = [s for s in cfg.stages if s not in STAGES]
    if bad:
        raise ConfigError(f"config.stages: unknown stage(s) {bad}; allowed: {list(STAGES)}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def override(cfg: RunConfig, dotted: dict) -> RunConfig:
    """Apply ``{"train.epochs": 5, "seed": 1}``-style overrides (``None`` values are skipped)."""
    data = cfg.to_dict()
    for key, value in dotted.items():
        if value is None:
            continue
        node = data
        *path, leaf = key.split(".")
        for p in path:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = value
    return config_from_dict(data)
