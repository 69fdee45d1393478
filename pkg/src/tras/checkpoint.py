"""JSON checkpoints and train-log serialization.

Checkpoint layout (``format = "tras-checkpoint"``, ``version = 1``)::

    {"format", "version", "config": {TrainConfig fields},
     "num_layers": int, "classes": [...], "prior_counts": [...],
     "params": {name: nested list}, "ema_params": {...},
     "optimizer": {"step": int, "m": {...}, "v": {...}}}

Floats are written with ``repr`` precision, so a load restores every
parameter bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .losses import ClassPrior
from .model import ModelParams
from .trainer import OptimizerState, TrainConfig

FORMAT = "tras-checkpoint"
VERSION = 1


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, full float precision)."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _named(params: ModelParams, arrays=None) -> dict:
    return {n: a.tolist() for n, a in zip(params.names(), arrays or params.arrays())}


def _unnamed(template: list[str], blob: dict) -> list[np.ndarray]:
    missing = [n for n in template if n not in blob]
    if missing:
        raise ValueError(f"checkpoint is missing arrays {missing}")
    return [np.asarray(blob[n], dtype=float) for n in template]


def save_checkpoint(path, params, ema_params, state: OptimizerState, config: TrainConfig,
                    prior: ClassPrior, classes=None) -> None:
    blob = {
        "format": FORMAT,
        "version": VERSION,
        "config": asdict(config),
        "num_layers": len(params.backbone),
        "classes": list(range(params.num_classes)) if classes is None else list(classes),
        "prior_counts": prior.counts.tolist(),
        "params": _named(params),
        "ema_params": _named(ema_params),
        "optimizer": {"step": state.step, "m": _named(params, state.m), "v": _named(params, state.v)},
    }
    Path(path).write_text(dumps(blob) + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if blob.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    n = blob["num_layers"]
    names = [f"backbone.{i}.{k}" for i in range(n) for k in ("weight", "bias")]
    names += ["teacher.weight", "teacher.bias", "student.weight", "student.bias"]
    opt = blob["optimizer"]
    return {
        "config": TrainConfig(**blob["config"]),
        "classes": blob["classes"],
        "prior": ClassPrior.from_counts(blob["prior_counts"],
                                        smoothing=blob["config"].get("prior_smoothing", 0.0)),
        "params": ModelParams.from_arrays(_unnamed(names, blob["params"]), n),
        "ema_params": ModelParams.from_arrays(_unnamed(names, blob["ema_params"]), n),
        "optimizer": OptimizerState(_unnamed(names, opt["m"]), _unnamed(names, opt["v"]), opt["step"]),
    }


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_default) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
