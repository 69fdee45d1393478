"""Command-line driver.

Subcommands: ``gen-data``, ``train``, ``eval``, ``sweep-ab``, ``export-features``.
Each prints one JSON summary line on success. Exit codes: 0 success,
1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ConfigError, parse_config
from .experiment import build_dataset, evaluate_checkpoint, generate_data, run_experiment, run_sweep
from .model import export_features, write_features_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON config file")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("--seeds", help="comma-separated seed list (one run per seed)")
    common.add_argument("--mode", choices=["shared", "two-stage", "tras-minus"])
    common.add_argument("--A", type=float, dest="A")
    common.add_argument("--B", type=float, dest="B")
    common.add_argument("--out", help="output directory (default $TRAS_OUT_ROOT or ./runs)")
    common.add_argument("--no-teacher-transform", action="store_true",
                        help="pseudo-label from raw teacher logits")
    common.add_argument("--plain-ce", action="store_true", help="plain CE for the student's labeled loss")
    common.add_argument("--no-mask", action="store_true", help="imitate on every unlabeled example")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config entry")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tras", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write labeled/unlabeled/test CSVs and a manifest")
    sub.add_parser("train", parents=[common], help="train and evaluate, writing all run artifacts")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test set")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("sweep-ab", parents=[common], help="grid over A and B")
    p.add_argument("--A-values", type=_floats, default=[0, 2, 4, 6])
    p.add_argument("--B-values", type=_floats, default=[0, 2, 4, 6])
    p = sub.add_parser("export-features", parents=[common], help="write backbone features as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["labeled", "unlabeled", "test"], default="test")
    return parser


def overrides_from_args(args) -> dict:
    ov = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = value.strip()
    if args.seed is not None:
        ov["train.seed"] = args.seed
        ov["dataset.seed"] = args.seed
    if args.seeds:
        ov["experiment.seeds"] = args.seeds
    if args.mode:
        ov["train.mode"] = args.mode.replace("-", "_")
    if args.A is not None:
        ov["train.A"] = args.A
    if args.B is not None:
        ov["train.B"] = args.B
    if args.out:
        ov["experiment.out"] = args.out
    if args.no_teacher_transform:
        ov["train.disable_teacher_transform"] = True
    if args.plain_ce:
        ov["train.use_plain_ce_labeled"] = True
    if args.no_mask:
        ov["train.disable_student_mask"] = True
    return ov


def _summary(command: str, **fields) -> str:
    return json.dumps({"command": command, "status": "ok", **fields}, sort_keys=True)


def _headline(report: dict) -> dict:
    return {k: report[k] for k in ("overall_accuracy", "minority_accuracy", "gm")}


def run(args) -> str:
    config = parse_config(args.config, overrides_from_args(args))
    if args.command == "gen-data":
        return _summary("gen-data", **generate_data(config))
    if args.command == "train":
        res = run_experiment(config)
        extra = {"aggregate": {k: res["aggregate"][k] for k in ("overall_accuracy", "minority_accuracy", "gm")}} \
            if "aggregate" in res else _headline(res["reports"][0])
        return _summary("train", out=res["out"], runs=len(res["reports"]), **extra)
    if args.command == "eval":
        return _summary("eval", out=config.out, **_headline(evaluate_checkpoint(config, args.checkpoint)))
    if args.command == "sweep-ab":
        rows = run_sweep(config, args.A_values, args.B_values)
        return _summary("sweep-ab", out=str(Path(config.out) / "sweep.csv"), cells=len(rows))
    if args.command == "export-features":
        ckpt = load_checkpoint(args.checkpoint)
        ds, (Xt, _), _ = build_dataset(config, ckpt["config"].seed)
        X = {"labeled": ds.labeled_X, "unlabeled": ds.unlabeled_X, "test": Xt}[args.split]
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        params = ckpt["ema_params"] if config.eval.use_ema else ckpt["params"]
        feats = export_features(params, X)
        path = out / f"features_{args.split}.csv"
        write_features_csv(path, feats)
        return _summary("export-features", out=str(path), rows=len(feats), dim=feats.shape[1])
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(run(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
