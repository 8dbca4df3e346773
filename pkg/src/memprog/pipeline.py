"""Stage runner: simulate → generate → train → finetune → evaluate, with a hashed manifest.

Each stage writes its files under the output directory and records their
SHA-256 in ``manifest.json`` next to a fingerprint of the stage's config and
inputs. A stage whose fingerprint and files are unchanged is skipped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import RunConfig
from .dataset import Dataset, DatasetConfig, generate_dataset
from .device import Polarity, switching_curve
from .errors import MemprogError, StageError
from .gtmap import FinetuneConfig, KernelSchedule, finetune
from .nn import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATASET_PREFIX = "dataset"
SCRATCH_MODEL = "model_scratch.json"
FINETUNED_MODEL = "model_finetuned.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


class Context:
    def __init__(self, cfg: RunConfig, out: Path, jobs: int, inputs: dict):
        self.cfg = cfg
        self.out = out
        self.jobs = jobs
        self.inputs = inputs

    def path(self, key, default_name) -> Path:
        return Path(self.inputs.get(key) or self.out / default_name)

    def dataset_prefix(self) -> Path:
        return self.path("dataset", DATASET_PREFIX)

    def dataset_files(self):
        p = self.dataset_prefix()
        return [p.with_name(p.name + ".meta.json"), p.with_name(p.name + ".samples.bin")]

    def load_dataset(self) -> Dataset:
        return Dataset.load(self.dataset_prefix())

    def model_path(self, which) -> Path:
        if which == "scratch":
            return self.path("scratch_model", SCRATCH_MODEL)
        return self.path("model", FINETUNED_MODEL)

    def predictor(self):
        which = self.cfg.eval.predictor
        if which == "oracle":
            return ev.OraclePredictor(self.cfg.device, self.cfg.oracle), []
        if which not in ("finetuned", "scratch"):
            raise MemprogError(f"unknown predictor {which!r}")
        path = self.model_path(which)
        try:
            mlp, norm, _ = load_checkpoint(path)
        except (OSError, ValueError, KeyError) as exc:
            raise MemprogError(f"cannot load model {path}: {exc}") from exc
        return ev.NetworkPredictor(mlp, norm, which), [path]


# -- stages -----------------------------------------------------------------


def stage_switching_curve(ctx: Context):
    sc = ctx.cfg.switching_curve
    traces = switching_curve(ctx.cfg.device, sc.n_pulses, sc.n_devices, Polarity[sc.polarity],
                             noisy=sc.noisy, seed=ctx.cfg.seed_for("switching_curve"))
    path = ctx.out / "switching_curve.csv"
    _write_rows(path, ["device_id", "pulse_index", "conductance_uS"],
                ([d, k, repr(float(traces[d, k]))] for d in range(traces.shape[0])
                 for k in range(traces.shape[1])))
    return [path], {}


def stage_dataset(ctx: Context):
    d = ctx.cfg.dataset
    dcfg = DatasetConfig(n=d.n, margin=d.margin, min_gap=d.min_gap, cap_factor=d.cap_factor)
    ds = generate_dataset(ctx.cfg.device, d.n, ctx.cfg.seed_for("dataset"), dcfg, jobs=ctx.jobs)
    files = list(ds.save(ctx.out / DATASET_PREFIX))
    if d.export_csv:
        files.append(ds.export_csv(ctx.out / "dataset.csv"))
    summary = {"n": len(ds), "rejected": ds.meta["rejected"], "rejection_rate": ds.meta["rejection_rate"],
               "split": [len(ds.train), len(ds.val), len(ds.test)], "norm": asdict(ds.norm)}
    return files, summary


def ds_hash(ctx):
    return sha256_file(ctx.dataset_files()[1])


def _history_csv(path, history, keys):
    _write_rows(path, keys, ([h[k] for k in keys] for h in history))


def stage_train(ctx: Context):
    t = ctx.cfg.train
    ds = ctx.load_dataset()
    tcfg = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
                       momentum=t.momentum, seed=ctx.cfg.seed_for("train"),
                       checkpoint_metric=t.checkpoint_metric)
    mlp, history = train(ds, tcfg)
    prov = {"dataset_sha256": ds_hash(ctx), "train": ctx.cfg.section_dict("train")}
    model = save_checkpoint(ctx.out / SCRATCH_MODEL, mlp, ds.norm, prov)
    hist = ctx.out / "train_history.csv"
    _history_csv(hist, history, ["epoch", "train_loss", "RPD_T", "RPD_G", "frac_G", "best"])
    best = min(history, key=lambda h: h[t.checkpoint_metric])
    return [model, hist], {"best_epoch": best["epoch"], "val_RPD_T": best["RPD_T"], "val_RPD_G": best["RPD_G"]}


def stage_finetune(ctx: Context):
    f = ctx.cfg.finetune
    ds = ctx.load_dataset()
    mlp, _, _ = load_checkpoint(ctx.model_path("scratch"))
    schedule = KernelSchedule.parse(f.schedule)
    fcfg = FinetuneConfig(batch_size=f.batch_size, learning_rate=f.learning_rate,
                          momentum=f.momentum, seed=ctx.cfg.seed_for("finetune"))
    best, history = finetune(mlp, ds, schedule, fcfg)
    prov = {"dataset_sha256": ds_hash(ctx), "finetune": ctx.cfg.section_dict("finetune"),
            "base_model_sha256": sha256_file(ctx.model_path("scratch"))}
    model = save_checkpoint(ctx.out / FINETUNED_MODEL, best, ds.norm, prov)
    hist = ctx.out / "finetune_history.csv"
    _history_csv(hist, history, ["stage", "kernel", "epoch", "train_loss", "RPD_T", "RPD_G", "frac_G", "best"])
    stages = ctx.out / "finetune_stages.csv"
    rows = []
    for s, (kernel, epochs) in enumerate(schedule.stages, start=1):
        hs = [h for h in history if h["stage"] == s]
        rows.append([s, kernel, epochs,
                     repr(min(h["RPD_G"] for h in hs)) if hs else "",
                     repr(hs[-1]["RPD_G"]) if hs else ""])
    _write_rows(stages, ["stage", "kernel", "epochs", "best_val_rpd_g", "final_val_rpd_g"], rows)
    return [model, hist, stages], {"val_RPD_G_before": history[0]["RPD_G"],
                                   "val_RPD_G_best": min(h["RPD_G"] for h in history)}


def stage_oneshot(ctx: Context):
    e = ctx.cfg.eval
    pred, _ = ctx.predictor()
    rep = ev.one_shot_eval(pred, ctx.cfg.device, e.n_trials, ctx.cfg.seed_for("eval"), jobs=ctx.jobs)
    trials, cells = ctx.out / "oneshot_trials.csv", ctx.out / "oneshot_cells.csv"
    rep.write_csv(trials, cells)
    summary = {**rep.summary(), "predictor_sha256": pred.digest()}
    js = ctx.out / "oneshot_summary.json"
    _write_json(js, summary)
    return [trials, cells, js], summary


def stage_wav(ctx: Context):
    e = ctx.cfg.eval
    pred, _ = ctx.predictor()
    g0, gt = ev.scaled_targets(ctx.cfg.device, (e.wav_g_start, e.wav_g_target))
    tr = ev.write_and_verify(pred, ctx.cfg.device, g0, gt, e.max_iter, e.window, ctx.cfg.seed_for("eval"))
    path = ctx.out / "wav_trajectory.csv"
    _write_rows(path, ["iteration", "t_pulse_ns", "g_after_uS", "g_target_uS"],
                [[0, 0.0, repr(tr.g_start), gt]] + [[i, repr(t), repr(g), gt] for i, t, g in tr.records])
    summary = {"g_start": tr.g_start, "g_target": gt, "converged_g": tr.converged_g,
               "iters_to_window": tr.iters_to_window, "predictor_sha256": pred.digest()}
    return [path], summary


def stage_wav_sweep(ctx: Context):
    e = ctx.cfg.eval
    pred, _ = ctx.predictor()
    rep = ev.wav_sweep(pred, ctx.cfg.device, ev.default_start_grid(ctx.cfg.device, e.grid_points),
                       ev.scaled_targets(ctx.cfg.device, e.targets), e.repeats, e.max_iter, e.window,
                       ctx.cfg.seed_for("eval"), jobs=ctx.jobs)
    path = ctx.out / "wav_sweep.csv"
    rep.write_csv(path)
    summary = {"per_target": rep.per_target(), "predictor_sha256": pred.digest()}
    js = ctx.out / "wav_sweep_summary.json"
    _write_json(js, summary)
    return [path, js], summary


def stage_delay(ctx: Context):
    e = ctx.cfg.eval
    pred, _ = ctx.predictor()
    rep = ev.delay_benchmark(pred, ctx.cfg.device, ev.scaled_targets(ctx.cfg.device, e.targets),
                             ev.default_start_grid(ctx.cfg.device, e.grid_points), e.window,
                             e.baseline_pulse_ns, e.delay_repeats, e.delay_cap, ctx.cfg.seed_for("eval"))
    path = ctx.out / "delay_bench.csv"
    rep.write_csv(path)
    summary = {"per_target": rep.per_target(), "baseline_pulse_ns": e.baseline_pulse_ns,
               "window": e.window, "predictor_sha256": pred.digest()}
    js = ctx.out / "delay_summary.json"
    _write_json(js, summary)
    return [path, js], summary


STAGE_FUNCS = {
    "device.switching-curve": (stage_switching_curve, ("device", "switching_curve")),
    "dataset": (stage_dataset, ("device", "dataset")),
    "train": (stage_train, ("train",)),
    "finetune": (stage_finetune, ("finetune",)),
    "eval.oneshot": (stage_oneshot, ("device", "oracle", "eval")),
    "eval.wav": (stage_wav, ("device", "oracle", "eval")),
    "eval.wav-sweep": (stage_wav_sweep, ("device", "oracle", "eval")),
    "eval.delay-bench": (stage_delay, ("device", "oracle", "eval")),
}


def _stage_inputs(ctx: Context, stage: str) -> list:
    if stage == "train":
        return ctx.dataset_files()
    if stage == "finetune":
        return ctx.dataset_files() + [ctx.model_path("scratch")]
    if stage.startswith("eval.") and ctx.cfg.eval.predictor != "oracle":
        return [ctx.model_path(ctx.cfg.eval.predictor)]
    return []


def load_manifest(out) -> dict:
    path = Path(out) / MANIFEST
    if path.exists():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError:
            log.warning("ignoring unreadable manifest %s", path)
    return {"version": 1, "stages": {}}


def _up_to_date(out: Path, entry, fingerprint) -> bool:
    if not entry or entry.get("fingerprint") != fingerprint:
        return False
    for rel, digest in entry.get("files", {}).items():
        p = out / rel
        if not p.exists() or sha256_file(p) != digest:
            return False
    return True


def _rel(out: Path, p: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(out.resolve()))
    except ValueError:
        return str(Path(p).resolve())


def run_pipeline(cfg: RunConfig, jobs: int = 1, inputs: dict | None = None, force: bool = False) -> dict:
    """Run ``cfg.stages`` in canonical order; returns the manifest.

    Raises :class:`StageError` on the first failing stage after saving the
    manifest of everything completed so far.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, jobs, dict(inputs or {}))
    manifest = load_manifest(out)
    ordered = [s for s in STAGE_FUNCS if s in cfg.stages]
    for stage in ordered:
        func, sections = STAGE_FUNCS[stage]
        try:
            in_files = _stage_inputs(ctx, stage)
            missing = [str(p) for p in in_files if not Path(p).exists()]
            if missing:
                raise MemprogError(f"missing input file(s): {', '.join(missing)}")
            fingerprint = _digest({
                "stage": stage,
                "config": {s: cfg.section_dict(s) for s in sections},
                "inputs": {_rel(out, p): sha256_file(p) for p in in_files},
            })
            if not force and _up_to_date(out, manifest["stages"].get(stage), fingerprint):
                log.info("stage %s up to date, skipped", stage)
                continue
            log.info("stage %s running", stage)
            files, summary = func(ctx)
        except StageError:
            raise
        except (MemprogError, OSError, ValueError) as exc:
            _write_json(out / MANIFEST, manifest)
            raise StageError(stage, str(exc)) from exc
        manifest["stages"][stage] = {
            "fingerprint": fingerprint,
            "files": {_rel(out, p): sha256_file(p) for p in files},
            "summary": json.loads(json.dumps(summary, default=_jsonable)),
        }
        _write_json(out / MANIFEST, manifest)
    return manifest


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
