"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig, load_config, override
from .errors import ConfigError, StageError
from .pipeline import run_pipeline

SUBCOMMANDS = {
    "simulate-device": ["device.switching-curve"],
    "gen-dataset": ["dataset"],
    "train": ["train"],
    "finetune": ["finetune"],
    "eval-oneshot": ["eval.oneshot"],
    "wav": ["eval.wav"],
    "wav-sweep": ["eval.wav-sweep"],
    "delay-bench": ["eval.delay-bench"],
    "pipeline": None,  # stages from the config
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--force", action="store_true", help="rerun stages even if up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="memprog", description="Memristor pulse-predictor pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-device", parents=[common], help="switching curves to CSV")
    p.add_argument("--n-pulses", type=int, dest="switching_curve.n_pulses")
    p.add_argument("--n-devices", type=int, dest="switching_curve.n_devices")
    p.add_argument("--polarity", choices=["SET", "RESET"], dest="switching_curve.polarity")
    p.add_argument("--noise-free", action="store_const", const=False, dest="switching_curve.noisy")

    p = sub.add_parser("gen-dataset", parents=[common], help="generate the pulse-time dataset")
    p.add_argument("--n", type=int, dest="dataset.n")
    p.add_argument("--no-csv", action="store_const", const=False, dest="dataset.export_csv")

    p = sub.add_parser("train", parents=[common], help="train the predictor on pulse times")
    p.add_argument("--epochs", type=int, dest="train.epochs")
    p.add_argument("--lr", type=float, dest="train.learning_rate")
    p.add_argument("--batch", type=int, dest="train.batch_size")
    p.add_argument("--checkpoint-metric", choices=["t", "g"], dest="checkpoint_metric")
    p.add_argument("--dataset", dest="input.dataset", help="dataset prefix (default: <out>/dataset)")

    p = sub.add_parser("finetune", parents=[common], help="fine-tune through the G–t histories")
    p.add_argument("--schedule", dest="finetune.schedule", help="e.g. 1001:50,101:50,11:50,1:50")
    p.add_argument("--lr", type=float, dest="finetune.learning_rate")
    p.add_argument("--batch", type=int, dest="finetune.batch_size")
    p.add_argument("--dataset", dest="input.dataset")
    p.add_argument("--model", dest="input.scratch_model", help="scratch checkpoint to start from")

    for name, help_ in (("eval-oneshot", "one-shot programming sweep"),
                        ("wav", "single write-and-verify trajectory"),
                        ("wav-sweep", "write-and-verify convergence sweep"),
                        ("delay-bench", "programming delay vs fixed-pulse baseline")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--predictor", choices=["finetuned", "scratch", "oracle"], dest="eval.predictor")
        p.add_argument("--model", dest="input.model", help="checkpoint path for the predictor")
        p.add_argument("--window", type=float, dest="eval.window")
        if name == "eval-oneshot":
            p.add_argument("--trials", type=int, dest="eval.n_trials")
        if name in ("wav", "wav-sweep"):
            p.add_argument("--max-iter", type=int, dest="eval.max_iter")
        if name == "wav":
            p.add_argument("--g-start", type=float, dest="eval.wav_g_start")
            p.add_argument("--g-target", type=float, dest="eval.wav_g_target")
        if name == "wav-sweep":
            p.add_argument("--repeats", type=int, dest="eval.repeats")
        if name == "delay-bench":
            p.add_argument("--baseline-pulse", type=float, dest="eval.baseline_pulse_ns")

    sub.add_parser("pipeline", parents=[common], help="run every stage listed in the config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = vars(args)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        dotted = {k: v for k, v in opts.items() if "." in k and not k.startswith("input.")}
        if opts.get("checkpoint_metric"):
            dotted["train.checkpoint_metric"] = {"t": "RPD_T", "g": "RPD_G"}[opts["checkpoint_metric"]]
        dotted["seed"] = args.seed
        dotted["out"] = args.out
        stages = SUBCOMMANDS[args.command]
        if stages is not None:
            dotted["stages"] = stages
        cfg = override(cfg, dotted)
    except ConfigError as exc:
        print(f"memprog: {exc}", file=sys.stderr)
        return 1
    inputs = {k.split(".", 1)[1]: v for k, v in opts.items() if k.startswith("input.") and v}
    try:
        manifest = run_pipeline(cfg, jobs=args.jobs, inputs=inputs, force=args.force)
    except StageError as exc:
        print(f"memprog: stage failed: {exc}", file=sys.stderr)
        return 2
    done = {s: manifest["stages"][s].get("summary", {}) for s in cfg.stages if s in manifest["stages"]}
    print(json.dumps(done, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
