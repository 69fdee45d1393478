"""Class-imbalance metrics: confusion, per-class recall, GM, pseudo-label quality."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .losses import kl_div

GROUPS = ("head", "torso", "tail")


@dataclass(frozen=True)
class ClassGrouping:
    head: tuple[int, ...]
    torso: tuple[int, ...]
    tail: tuple[int, ...]
    minority: tuple[int, ...]

    def __post_init__(self):
        parts = self.head + self.torso + self.tail
        L = len(parts)
        if sorted(parts) != list(range(L)):
            raise ValueError("head/torso/tail must partition the class indices")
        if not self.minority or not set(self.minority) <= set(parts):
            raise ValueError("minority must be a nonempty subset of the classes")

    @property
    def num_classes(self) -> int:
        return len(self.head) + len(self.torso) + len(self.tail)

    def group_of(self) -> np.ndarray:
        """Group index (0 head, 1 torso, 2 tail) for every class."""
        out = np.empty(self.num_classes, dtype=int)
        for g, name in enumerate(GROUPS):
            out[list(getattr(self, name))] = g
        return out

    @classmethod
    def default(cls, num_classes: int, counts=None, minority=None) -> "ClassGrouping":
        """Top 30% of classes by count are head, bottom 30% tail, the rest torso.

        Without counts, classes are assumed sorted by descending frequency.
        The minority set defaults to the rarer half.
        """
        order = (np.arange(num_classes) if counts is None
                 else np.argsort(-np.asarray(counts), kind="stable"))
        n_edge = int(math.floor(0.3 * num_classes + 0.5))
        head = tuple(sorted(order[:n_edge].tolist()))
        tail = tuple(sorted(order[num_classes - n_edge:].tolist()))
        torso = tuple(sorted(order[n_edge:num_classes - n_edge].tolist()))
        if minority is None:
            minority = tuple(sorted(order[(num_classes + 1) // 2:].tolist()))
        return cls(head, torso, tail, tuple(int(c) for c in minority))


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=int).ravel()
    p = np.asarray(predicted_labels, dtype=int).ravel()
    if t.shape != p.shape:
        raise ValueError("true and predicted labels differ in length")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.bincount(t * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def accuracy_suite(confusion, minority):
    """Return ``(overall, per_class_recall, minority_accuracy, empty_classes)``.

    Classes without test examples get recall 0 and are listed in ``empty_classes``.
    """
    C = np.asarray(confusion, dtype=float)
    total = C.sum()
    overall = float(np.trace(C) / total) if total else 0.0
    rows = C.sum(axis=1)
    recall = np.divide(np.diag(C), rows, out=np.zeros(len(C)), where=rows > 0)
    minority_acc = float(recall[list(minority)].mean())
    return overall, recall, minority_acc, np.flatnonzero(rows == 0).tolist()


def geometric_mean(per_class_recall, floor: float = 1e-3) -> float:
    r = np.maximum(np.asarray(per_class_recall, dtype=float), floor)
    return float(np.exp(np.log(r).mean()))


def pseudo_label_quality(hidden_labels, pseudo_labels, mask_flags, grouping: ClassGrouping) -> dict:
    """Per-group precision and recall of pseudo-labels.

    Precision counts only mask-passing rows; recall divides by every row whose
    true class is in the group, so masked-out rows count as misses. Undefined
    ratios are reported as 0 and listed under ``"undefined"``.
    """
    hidden = np.asarray(hidden_labels, dtype=int)
    pseudo = np.asarray(pseudo_labels, dtype=int)
    mask = np.asarray(mask_flags, dtype=bool)
    if not hidden.shape == pseudo.shape == mask.shape:
        raise ValueError("inputs must have equal lengths")
    group = grouping.group_of()
    hit = mask & (pseudo == hidden)
    out, undefined = {}, []
    for g, name in enumerate(GROUPS):
        predicted = mask & (group[pseudo] == g)
        actual = group[hidden] == g
        n_pred, n_true = int(predicted.sum()), int(actual.sum())
        n_hit = int((hit & predicted).sum())
        if n_pred == 0:
            undefined.append(f"{name}_precision")
        if n_true == 0:
            undefined.append(f"{name}_recall")
        out[f"{name}_precision"] = n_hit / n_pred if n_pred else 0.0
        out[f"{name}_recall"] = n_hit / n_true if n_true else 0.0
    out["undefined"] = undefined
    return out


def balancedness(prob_dists) -> float:
    """KL divergence of the mean predicted distribution from uniform (0 = balanced)."""
    P = np.asarray(prob_dists, dtype=float)
    if P.size == 0:
        raise ValueError("balancedness of an empty set of distributions is undefined")
    mean = P.reshape(-1, P.shape[-1]).mean(axis=0)
    return float(kl_div(mean, np.full(mean.size, 1.0 / mean.size)))


@dataclass
class MetricsReport:
    overall_accuracy: float
    per_class_recall: list
    minority_accuracy: float
    gm: float
    confusion: list
    group_precision: dict
    group_recall: dict
    balancedness: float
    empty_classes: list

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(y_true, y_pred, probs, grouping: ClassGrouping, gm_floor: float = 1e-3,
             pseudo_quality: dict | None = None) -> MetricsReport:
    L = grouping.num_classes
    C = confusion_matrix(y_true, y_pred, L)
    overall, recall, minority_acc, empty = accuracy_suite(C, grouping.minority)
    pseudo_quality = pseudo_quality or {}
    return MetricsReport(
        overall_accuracy=overall,
        per_class_recall=recall.tolist(),
        minority_accuracy=minority_acc,
        gm=geometric_mean(recall, gm_floor),
        confusion=C.tolist(),
        group_precision={g: pseudo_quality.get(f"{g}_precision", 0.0) for g in GROUPS},
        group_recall={g: pseudo_quality.get(f"{g}_recall", 0.0) for g in GROUPS},
        balancedness=balancedness(probs) if len(probs) else 0.0,
        empty_classes=empty,
    )


def write_confusion_csv(path, confusion) -> None:
    C = np.asarray(confusion, dtype=int)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"pred_{j}" for j in range(C.shape[1])) + "\n")
        for row in C:
            fh.write(",".join(str(v) for v in row) + "\n")
