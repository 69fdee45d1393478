"""Experiment configuration: INI or JSON files plus command-line overrides.

INI layout::

    [dataset]     source = synthetic | csv, n1, gamma, beta, num_classes, ...
    [train]       any TrainConfig field (A, B, threshold, mode, ...)
    [eval]        minority, head, torso, tail, gm_floor, predict_head, use_ema
    [experiment]  seeds, out

JSON files use the same sections as top-level objects.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .trainer import TrainConfig

OUT_ROOT_ENV = "TRAS_OUT_ROOT"
ALIASES = {"train": {"t": "threshold", "lr": "learning_rate"}}


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    n1: int = 1000
    gamma: float = 50.0
    beta: float = 0.2
    num_classes: int = 10
    feature_dim: int = 4
    separation: float = 2.0
    std: float = 1.0
    test_per_class: int = 200
    seed: int = 0
    labeled_path: str = ""
    unlabeled_path: str = ""
    test_path: str = ""


@dataclass
class EvalConfig:
    minority: tuple = ()
    head: tuple = ()
    torso: tuple = ()
    tail: tuple = ()
    gm_floor: float = 1e-3
    predict_head: str = "student"
    use_ema: bool = True


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple = ()
    out: str = ""

    def seed_list(self) -> list[int]:
        return list(self.seeds) or [self.train.seed]

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(section: str, key: str, default, value):
    where = f"{section}.{key}"
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, tuple):
            if isinstance(value, (list, tuple)):
                items = list(value)
            else:
                items = [v for v in str(value).replace(" ", "").split(",") if v]
            return tuple(int(v) for v in items)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {type(default).__name__}") from None


def _read_file(path) -> dict[str, dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigError(f"{path}: expected an object of sections")
        return data
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


_SECTIONS = {"dataset": DatasetConfig, "train": TrainConfig, "eval": EvalConfig}


def _defaults(section: str) -> dict:
    return {f.name: getattr(_SECTIONS[section](), f.name) for f in fields(_SECTIONS[section])}


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults, the optional file and ``{"section.key": value}`` overrides."""
    raw: dict[str, dict] = {s: {} for s in (*_SECTIONS, "experiment")}
    layers = [_read_file(path)] if path else []
    layers.append(_split_overrides(overrides or {}))
    for layer in layers:
        for section, values in layer.items():
            if section not in raw:
                raise ConfigError(f"unknown section [{section}]")
            for key, value in values.items():
                raw[section][ALIASES.get(section, {}).get(key, key)] = value

    built = {}
    for section in _SECTIONS:
        defaults = _defaults(section)
        values = dict(defaults)
        for key, value in raw[section].items():
            if key not in defaults:
                raise ConfigError(f"{section}.{key}: unknown key")
            values[key] = _coerce(section, key, defaults[key], value)
        try:
            built[section] = _SECTIONS[section](**values)
        except ValueError as exc:
            raise ConfigError(f"{section}.{exc}") from None

    exp = raw["experiment"]
    for key in exp:
        if key not in ("seeds", "out"):
            raise ConfigError(f"experiment.{key}: unknown key")
    seeds = _coerce("experiment", "seeds", (), exp.get("seeds", ()))
    out = str(exp.get("out") or os.environ.get(OUT_ROOT_ENV) or "runs")
    config = ExperimentConfig(built["dataset"], built["train"], built["eval"], seeds, out)
    _check(config)
    return config


def _split_overrides(overrides: dict) -> dict[str, dict]:
    layer: dict[str, dict] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        layer.setdefault(section, {})[key] = value
    return layer


def _check(config: ExperimentConfig) -> None:
    d = config.dataset
    if d.source not in ("synthetic", "csv"):
        raise ConfigError("dataset.source: must be 'synthetic' or 'csv'")
    if d.source == "csv":
        for key in ("labeled_path", "test_path"):
            if not getattr(d, key):
                raise ConfigError(f"dataset.{key}: required when source = csv")
        for key in ("labeled_path", "unlabeled_path", "test_path"):
            p = getattr(d, key)
            if p and not Path(p).is_file():
                raise ConfigError(f"dataset.{key}: file {p!r} does not exist")
    else:
        if d.gamma < 1:
            raise ConfigError("dataset.gamma: must be >= 1")
        if not 0 < d.beta < 1:
            raise ConfigError("dataset.beta: must lie in (0,1)")
        if d.num_classes < 2 or d.n1 < d.num_classes:
            raise ConfigError("dataset.n1: need n1 >= num_classes >= 2")
        if d.feature_dim < 1 or d.test_per_class < 1:
            raise ConfigError("dataset.feature_dim: feature_dim and test_per_class must be >= 1")
    e = config.eval
    if e.predict_head not in ("student", "teacher"):
        raise ConfigError("eval.predict_head: must be 'student' or 'teacher'")
    if e.gm_floor <= 0:
        raise ConfigError("eval.gm_floor: must be > 0")
    if bool(e.head or e.torso or e.tail) and not (e.head and e.tail):
        raise ConfigError("eval.head: head and tail must both be given to override the grouping")
