"""End-to-end runs: build data, train, evaluate and write artifacts."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .checkpoint import dumps, load_checkpoint, save_checkpoint, write_jsonl
from .config import ExperimentConfig
from .data import (
    balanced_test_set,
    load_csv_dataset,
    longtail_counts,
    MixtureSpec,
    split_labeled_unlabeled,
    synth_gaussian_mixture,
    write_csv,
    write_csv_dataset,
    write_manifest,
)
from .losses import softmax
from .metrics import GROUPS, ClassGrouping, evaluate, write_confusion_csv
from .model import forward
from .trainer import train

log = logging.getLogger(__name__)

ARTIFACTS = ("manifest.txt", "train_log.jsonl", "metrics.json", "confusion.csv", "checkpoint.json")
SUMMARY_KEYS = ("overall_accuracy", "minority_accuracy", "gm", "balancedness")


def build_dataset(config: ExperimentConfig, seed: int):
    """Return ``(dataset, (X_test, y_test), manifest_entries)``."""
    d = config.dataset
    if d.source == "csv":
        ds = load_csv_dataset(d.labeled_path, d.unlabeled_path or None)
        test = load_csv_dataset(d.test_path, num_classes=ds.num_classes)
        manifest = dict(source="csv", num_classes=ds.num_classes, labeled_path=d.labeled_path,
                        unlabeled_path=d.unlabeled_path, test_path=d.test_path)
        test_set = (test.labeled_X, test.labeled_y)
    else:
        totals = longtail_counts(d.n1, d.gamma, d.num_classes)
        lab, unl = split_labeled_unlabeled(totals, d.beta)
        spec = MixtureSpec.random(d.num_classes, d.feature_dim, d.separation, d.std, seed)
        ds = synth_gaussian_mixture(spec, lab, unl)
        test_set = balanced_test_set(spec, d.test_per_class)
        manifest = dict(source="synthetic", num_classes=d.num_classes, gamma=d.gamma, beta=d.beta,
                        n1=d.n1, feature_dim=d.feature_dim, separation=d.separation, std=d.std,
                        test_per_class=d.test_per_class)
    manifest.update(seed=seed, labeled_counts=ds.labeled_counts, unlabeled_counts=ds.unlabeled_counts)
    return ds, test_set, manifest


def grouping_for(config: ExperimentConfig, num_classes: int, counts) -> ClassGrouping:
    e = config.eval
    base = ClassGrouping.default(num_classes, counts, minority=e.minority or None)
    if e.head and e.tail:
        torso = e.torso or tuple(c for c in range(num_classes) if c not in e.head + e.tail)
        return ClassGrouping(e.head, torso, e.tail, base.minority)
    return base


def evaluate_params(params, test_set, grouping, config: ExperimentConfig, log_records=()):
    """MetricsReport dict for one model, plus pseudo-label stats from the last epoch."""
    X, y = test_set
    out = forward(params, X)
    logits = out.student_logits if config.eval.predict_head == "student" else out.teacher_logits
    last = next((r for r in reversed(list(log_records)) if "pseudo_label" in r or "balancedness_transformed" in r), {})
    report = evaluate(y, logits.argmax(axis=1), softmax(logits), grouping, config.eval.gm_floor,
                      last.get("pseudo_label"))
    result = report.to_dict()
    # pseudo-label distribution handed to the student, not the test predictions
    result["prediction_balancedness"] = result["balancedness"]
    result["balancedness"] = last.get("balancedness_transformed", result["balancedness"])
    recall = np.asarray(report.per_class_recall)
    result["group_test_recall"] = {g: float(recall[list(getattr(grouping, g))].mean()) for g in GROUPS}
    return result


def run_single(config: ExperimentConfig, seed: int, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, test_set, manifest = build_dataset(config, seed)
    train_cfg = config.train.replace(seed=seed)
    grouping = grouping_for(config, ds.num_classes, ds.labeled_counts)
    result = train(ds, train_cfg, test_set=test_set, grouping=grouping,
                   eval_head=config.eval.predict_head)
    params = result.ema_params if config.eval.use_ema else result.params
    metrics = evaluate_params(params, test_set, grouping, config, result.log)
    raw = evaluate_params(result.params, test_set, grouping, config, result.log)
    metrics["raw_weights"] = {k: raw[k] for k in ("overall_accuracy", "minority_accuracy", "gm")}
    metrics.update(seed=seed, mode=train_cfg.mode, A=train_cfg.A, B=train_cfg.B)

    write_manifest(out_dir / "manifest.txt", **manifest)
    write_jsonl(out_dir / "train_log.jsonl", result.log)
    (out_dir / "metrics.json").write_text(dumps(metrics) + "\n", encoding="utf-8")
    write_confusion_csv(out_dir / "confusion.csv", metrics["confusion"])
    save_checkpoint(out_dir / "checkpoint.json", result.params, result.ema_params, result.optimizer,
                    train_cfg, result.prior)
    return metrics


def _flatten(metrics: dict) -> dict:
    flat = {k: metrics[k] for k in SUMMARY_KEYS}
    for g in GROUPS:
        flat[f"{g}_precision"] = metrics["group_precision"][g]
        flat[f"{g}_recall"] = metrics["group_recall"][g]
        flat[f"{g}_test_recall"] = metrics["group_test_recall"][g]
    return flat


def aggregate(reports: list[dict]) -> dict:
    """Per-metric mean and sample standard deviation across seeds."""
    flat = [_flatten(r) for r in reports]
    out = {"seeds": [r["seed"] for r in reports]}
    for key in flat[0]:
        vals = np.array([f[key] for f in flat], dtype=float)
        out[key] = {"mean": float(vals.mean()),
                    "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Train once per seed; with several seeds also write ``aggregate.json``."""
    out_dir = Path(out_dir or config.out)
    seeds = config.seed_list()
    if len(seeds) == 1:
        return {"reports": [run_single(config, seeds[0], out_dir)], "out": str(out_dir)}
    reports = [run_single(config, s, out_dir / f"seed_{s}") for s in seeds]
    agg = aggregate(reports)
    (out_dir / "aggregate.json").write_text(dumps(agg) + "\n", encoding="utf-8")
    return {"reports": reports, "aggregate": agg, "out": str(out_dir)}


SWEEP_COLUMNS = ("A", "B", *SUMMARY_KEYS[:3], *(f"{g}_precision" for g in GROUPS),
                 *(f"{g}_recall" for g in GROUPS), "balancedness", *(f"{g}_test_recall" for g in GROUPS))


def run_sweep(config: ExperimentConfig, A_values, B_values, out_dir=None) -> list[dict]:
    """One experiment per ``(A, B)`` cell; rows hold the seed-averaged metrics."""
    if not A_values or not B_values:
        raise ValueError("A and B grids must be nonempty")
    out_dir = Path(out_dir or config.out)
    rows = []
    for a in A_values:
        for b in B_values:
            cell = ExperimentConfig(config.dataset, config.train.replace(A=float(a), B=float(b)),
                                    config.eval, config.seeds, config.out)
            res = run_experiment(cell, out_dir / f"A{a:g}_B{b:g}")
            flat = [_flatten(r) for r in res["reports"]]
            row = {"A": float(a), "B": float(b)}
            for key in SWEEP_COLUMNS[2:]:
                row[key] = float(np.mean([f[key] for f in flat]))
            rows.append(row)
            log.info("sweep cell A=%g B=%g overall=%.4f", a, b, row["overall_accuracy"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) for k, v in row.items()})
    return rows


def generate_data(config: ExperimentConfig, out_dir=None) -> dict:
    out_dir = Path(out_dir or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed_list()[0]
    ds, (Xt, yt), manifest = build_dataset(config, seed)
    write_csv_dataset(ds, out_dir / "labeled.csv", out_dir / "unlabeled.csv")
    write_csv(out_dir / "test.csv", Xt, yt)
    write_manifest(out_dir / "manifest.txt", **manifest)
    return {"labeled": len(ds.labeled_y), "unlabeled": len(ds.unlabeled_X), "test": len(yt),
            "out": str(out_dir)}


def evaluate_checkpoint(config: ExperimentConfig, checkpoint_path, out_dir=None) -> dict:
    out_dir = Path(out_dir or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(checkpoint_path)
    seed = ckpt["config"].seed
    ds, test_set, _ = build_dataset(config, seed)
    grouping = grouping_for(config, ds.num_classes, ckpt["prior"].counts)
    params = ckpt["ema_params"] if config.eval.use_ema else ckpt["params"]
    metrics = evaluate_params(params, test_set, grouping, config)
    metrics.update(seed=seed, checkpoint=str(checkpoint_path))
    (out_dir / "eval_metrics.json").write_text(dumps(metrics) + "\n", encoding="utf-8")
    write_confusion_csv(out_dir / "eval_confusion.csv", metrics["confusion"])
    return metrics
