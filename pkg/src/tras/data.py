"""Long-tailed dataset construction, augmentation and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNKNOWN = -1


class DatasetParseError(ValueError):
    pass


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


@dataclass(frozen=True)
class Dataset:
    """Labeled pairs plus unlabeled inputs.

    ``unlabeled_hidden_y`` keeps the true class of unlabeled rows (``-1`` when
    unknown) for pseudo-label diagnostics only; training code never reads it.
    """

    labeled_X: np.ndarray
    labeled_y: np.ndarray
    unlabeled_X: np.ndarray
    num_classes: int
    unlabeled_hidden_y: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.unlabeled_hidden_y is None:
            object.__setattr__(self, "unlabeled_hidden_y",
                               np.full(len(self.unlabeled_X), UNKNOWN, dtype=int))
        if len(self.labeled_X) != len(self.labeled_y):
            raise ValueError("labeled_X and labeled_y differ in length")
        if len(self.unlabeled_X) != len(self.unlabeled_hidden_y):
            raise ValueError("unlabeled_X and unlabeled_hidden_y differ in length")

    @property
    def feature_dim(self) -> int:
        return self.labeled_X.shape[1]

    @property
    def labeled_counts(self) -> np.ndarray:
        return np.bincount(self.labeled_y, minlength=self.num_classes)

    @property
    def unlabeled_counts(self) -> np.ndarray:
        known = self.unlabeled_hidden_y[self.unlabeled_hidden_y >= 0]
        return np.bincount(known, minlength=self.num_classes)

    def to_semi_supervised(self):
        """Stack into ``(X, y)`` with ``y == -1`` on unlabeled rows."""
        X = np.vstack([self.labeled_X, self.unlabeled_X.reshape(-1, self.feature_dim)])
        y = np.concatenate([self.labeled_y, np.full(len(self.unlabeled_X), UNKNOWN)]).astype(int)
        return X, y


def longtail_counts(n1: int, gamma: float, num_classes: int) -> list[int]:
    """Exponential profile ``n1 * gamma ** (-(l-1)/(L-1))``, rounded, floored at 1."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if num_classes < 2 or n1 < num_classes:
        raise ValueError("need n1 >= num_classes >= 2")
    exponents = np.arange(num_classes) / (num_classes - 1)
    counts = np.maximum(_round_half_up(n1 * float(gamma) ** -exponents), 1)
    counts[0] = n1
    return counts.tolist()


def split_labeled_unlabeled(totals, beta: float) -> tuple[list[int], list[int]]:
    """Per-class split keeping the same class profile in both parts."""
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    totals = np.asarray(totals, dtype=int)
    if np.any(totals < 2):
        raise ValueError("every class needs at least 2 examples to split")
    labeled = np.clip(_round_half_up(beta * totals), 1, totals - 1)
    return labeled.tolist(), (totals - labeled).tolist()


@dataclass(frozen=True)
class MixtureSpec:
    num_classes: int
    feature_dim: int
    means: np.ndarray
    std: float
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.shape != (self.num_classes, self.feature_dim):
            raise ValueError(f"means must have shape ({self.num_classes}, {self.feature_dim})")
        if len(np.unique(means, axis=0)) != self.num_classes:
            raise ValueError("class means must be pairwise distinct")
        if self.std < 0:
            raise ValueError("std must be >= 0")
        object.__setattr__(self, "means", means)

    @classmethod
    def random(cls, num_classes: int, feature_dim: int, separation: float = 3.0,
               std: float = 1.0, seed: int = 0) -> "MixtureSpec":
        """Class means drawn as isotropic Gaussians scaled by ``separation``."""
        rng = np.random.default_rng([seed, 1])
        means = rng.standard_normal((num_classes, feature_dim)) * separation
        return cls(num_classes, feature_dim, means, std, seed)


def _sample(spec: MixtureSpec, counts, rng) -> tuple[np.ndarray, np.ndarray]:
    y = np.repeat(np.arange(spec.num_classes), counts)
    X = spec.means[y] + spec.std * rng.standard_normal((len(y), spec.feature_dim))
    return X, y


def synth_gaussian_mixture(spec: MixtureSpec, labeled_counts, unlabeled_counts) -> Dataset:
    if len(labeled_counts) != spec.num_classes or len(unlabeled_counts) != spec.num_classes:
        raise ValueError("count vectors must have one entry per class")
    Xl, yl = _sample(spec, labeled_counts, np.random.default_rng([spec.seed, 2]))
    Xu, yu = _sample(spec, unlabeled_counts, np.random.default_rng([spec.seed, 3]))
    return Dataset(Xl, yl, Xu, spec.num_classes, yu)


def balanced_test_set(spec: MixtureSpec, per_class: int) -> tuple[np.ndarray, np.ndarray]:
    return _sample(spec, [per_class] * spec.num_classes, np.random.default_rng([spec.seed, 4]))


def make_longtail_benchmark(n1=1000, gamma=50.0, beta=0.2, num_classes=10, feature_dim=4,
                            separation=1.0, std=1.0, test_per_class=200, seed=0):
    """Synthetic long-tailed SSL problem plus a balanced test set."""
    totals = longtail_counts(n1, gamma, num_classes)
    lab, unl = split_labeled_unlabeled(totals, beta)
    spec = MixtureSpec.random(num_classes, feature_dim, separation, std, seed)
    return synth_gaussian_mixture(spec, lab, unl), balanced_test_set(spec, test_per_class)


def data_scale(X) -> np.ndarray:
    """Per-feature standard deviation; constant features get scale 1."""
    s = np.asarray(X, dtype=float).std(axis=0)
    return np.where(s > 0, s, 1.0)


def augment_batch(X, mode: str, rng, scale=1.0, weak_std=0.05, strong_std=0.2,
                  mask_rate=0.2) -> np.ndarray:
    """Gaussian jitter (weak) or larger jitter plus coordinate dropout (strong)."""
    X = np.asarray(X, dtype=float)
    if mode == "weak":
        return X + weak_std * scale * rng.standard_normal(X.shape)
    if mode != "strong":
        raise ValueError(f"mode must be 'weak' or 'strong', got {mode!r}")
    out = X + strong_std * scale * rng.standard_normal(X.shape)
    k = int(np.floor(mask_rate * X.shape[-1] + 1e-9))
    if k > 0:
        flat = out.reshape(-1, X.shape[-1])
        drop = rng.random(flat.shape).argsort(axis=1)[:, :k]
        np.put_along_axis(flat, drop, 0.0, axis=1)
        out = flat.reshape(X.shape)
    return out


def augment(x, mode: str, seed, **kwargs) -> np.ndarray:
    return augment_batch(x, mode, np.random.default_rng(seed), **kwargs)


def _parse_float(cell, row, path):
    try:
        return float(cell)
    except ValueError:
        raise DatasetParseError(f"{path}: row {row}: non-numeric cell {cell!r}") from None


def _parse_label(cell, row, path, num_classes):
    try:
        label = int(cell)
    except ValueError:
        raise DatasetParseError(f"{path}: row {row}: label {cell!r} is not an integer") from None
    if label < 0 or (num_classes is not None and label >= num_classes):
        raise DatasetParseError(f"{path}: row {row}: label {label} outside [0, {num_classes})")
    return label


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r]


def load_csv_dataset(labeled_path, unlabeled_path=None, num_classes=None) -> Dataset:
    """Read headerless CSVs: features then label (hidden label optional when unlabeled)."""
    rows = _read_rows(labeled_path)
    if not rows:
        raise DatasetParseError(f"{labeled_path}: no labeled rows")
    width = len(rows[0][1])
    if width < 2:
        raise DatasetParseError(f"{labeled_path}: row 1: need features and a label")
    X, y = [], []
    for i, r in rows:
        if len(r) != width:
            raise DatasetParseError(f"{labeled_path}: row {i}: expected {width} cells, got {len(r)}")
        X.append([_parse_float(c, i, labeled_path) for c in r[:-1]])
        y.append(_parse_label(r[-1], i, labeled_path, num_classes))
    if num_classes is None:
        num_classes = max(max(y) + 1, 2)
    d = width - 1

    U, hidden = [], []
    for i, r in (_read_rows(unlabeled_path) if unlabeled_path else []):
        if len(r) not in (d, d + 1):
            raise DatasetParseError(f"{unlabeled_path}: row {i}: expected {d} or {d + 1} cells, got {len(r)}")
        U.append([_parse_float(c, i, unlabeled_path) for c in r[:d]])
        hidden.append(_parse_label(r[d], i, unlabeled_path, num_classes) if len(r) > d else UNKNOWN)
    return Dataset(np.array(X), np.array(y, dtype=int), np.array(U).reshape(-1, d),
                   int(num_classes), np.array(hidden, dtype=int))


def write_csv(path, X, y=None) -> None:
    """Write rows with full float precision; ``y`` entries of -1 are omitted."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if y is not None and y[k] >= 0:
                cells.append(str(int(y[k])))
            fh.write(",".join(cells) + "\n")


def write_csv_dataset(dataset: Dataset, labeled_path, unlabeled_path) -> None:
    write_csv(labeled_path, dataset.labeled_X, dataset.labeled_y)
    write_csv(unlabeled_path, dataset.unlabeled_X, dataset.unlabeled_hidden_y)


def write_manifest(path, **entries) -> None:
    lines = []
    for key, value in entries.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ",".join(str(v) for v in np.asarray(value).tolist())
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
