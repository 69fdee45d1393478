"""Shared-backbone network with a teacher head and a student head.

The backbone is a ReLU multilayer perceptron; both heads are affine maps from
the last hidden layer (or the raw input when there are no hidden layers) to
class logits. Forward and backward passes are batched over rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import softmax

MODES = ("shared", "two_stage", "tras_minus")


@dataclass
class ModelParams:
    """Weights are stored ``(fan_out, fan_in)``; biases are 1-D."""

    backbone: list[tuple[np.ndarray, np.ndarray]]
    teacher_head: tuple[np.ndarray, np.ndarray]
    student_head: tuple[np.ndarray, np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Every parameter array in a fixed order (backbone, teacher, student)."""
        out = []
        for W, b in self.backbone:
            out += [W, b]
        out += list(self.teacher_head) + list(self.student_head)
        return out

    def names(self) -> list[str]:
        out = []
        for i in range(len(self.backbone)):
            out += [f"backbone.{i}.weight", f"backbone.{i}.bias"]
        return out + ["teacher.weight", "teacher.bias", "student.weight", "student.bias"]

    @classmethod
    def from_arrays(cls, arrays, num_layers: int) -> "ModelParams":
        arrays = list(arrays)
        backbone = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(num_layers)]
        k = 2 * num_layers
        return cls(backbone, (arrays[k], arrays[k + 1]), (arrays[k + 2], arrays[k + 3]))

    def map(self, fn) -> "ModelParams":
        return type(self).from_arrays([fn(a) for a in self.arrays()], len(self.backbone))

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    @property
    def input_dim(self) -> int:
        if self.backbone:
            return self.backbone[0][0].shape[1]
        return self.teacher_head[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.teacher_head[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.teacher_head[0].shape[0]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


class GradientSet(ModelParams):
    """Gradient buffers laid out exactly like :class:`ModelParams`."""


def init_params(input_dim: int, hidden_dims, num_classes: int, seed=0) -> ModelParams:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    hidden_dims = list(hidden_dims)
    dims = [input_dim, *hidden_dims]
    if any(int(d) < 1 for d in dims) or num_classes < 1:
        raise ValueError(f"all dimensions must be >= 1, got {dims} -> {num_classes}")
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        W = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        return W, np.zeros(fan_out)

    backbone = [layer(dims[i], dims[i + 1]) for i in range(len(hidden_dims))]
    feat = dims[-1]
    return ModelParams(backbone, layer(feat, num_classes), layer(feat, num_classes))


@dataclass
class ForwardOutput:
    features: np.ndarray
    teacher_logits: np.ndarray
    student_logits: np.ndarray
    teacher_probs: np.ndarray
    student_probs: np.ndarray
    pseudo_label: np.ndarray
    # post-activation of every backbone layer, starting with the input
    activations: list

    def __len__(self) -> int:
        return self.features.shape[0]


def _as_batch(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs with {params.input_dim} features, got shape {x.shape}")
    return x


def _backbone(params: ModelParams, x: np.ndarray) -> list:
    acts = [x]
    for W, b in params.backbone:
        acts.append(np.maximum(acts[-1] @ W.T + b, 0.0))
    return acts


def forward(params: ModelParams, x) -> ForwardOutput:
    acts = _backbone(params, _as_batch(params, x))
    h = acts[-1]
    zt = h @ params.teacher_head[0].T + params.teacher_head[1]
    zs = h @ params.student_head[0].T + params.student_head[1]
    return ForwardOutput(
        features=h,
        teacher_logits=zt,
        student_logits=zs,
        teacher_probs=softmax(zt),
        student_probs=softmax(zs),
        pseudo_label=zt.argmax(axis=1),
        activations=acts,
    )


def backward(params: ModelParams, out: ForwardOutput, grad_teacher_logits, grad_student_logits,
             mode: str = "shared") -> GradientSet:
    """Backpropagate per-row logit gradients through both heads and the backbone.

    ``grad_*_logits`` hold d(loss)/d(logits) for the rows of ``out``. Any term
    that must not reach a branch (the imitation loss through the teacher, say)
    is simply left out of that branch's array. With ``mode="tras_minus"`` the
    student branch updates its head only and never the backbone.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    gt = np.asarray(grad_teacher_logits, dtype=float)
    gs = np.asarray(grad_student_logits, dtype=float)
    h = out.features
    if gt.shape != out.teacher_logits.shape or gs.shape != out.student_logits.shape:
        raise ValueError("logit gradients must match the forward output shapes")

    teacher = (gt.T @ h, gt.sum(axis=0))
    student = (gs.T @ h, gs.sum(axis=0))

    dh = gt @ params.teacher_head[0]
    if mode != "tras_minus":
        dh = dh + gs @ params.student_head[0]

    backbone = [None] * len(params.backbone)
    for i in range(len(params.backbone) - 1, -1, -1):
        W, _ = params.backbone[i]
        dpre = dh * (out.activations[i + 1] > 0)
        backbone[i] = (dpre.T @ out.activations[i], dpre.sum(axis=0))
        dh = dpre @ W
    return GradientSet(backbone, teacher, student)


def export_features(params: ModelParams, X) -> np.ndarray:
    """Backbone features ``psi(x)``, one row per input row."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros((0, params.feature_dim))
    return _backbone(params, _as_batch(params, X))[-1]


def write_features_csv(path, features) -> None:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    header = ",".join(f"f{i}" for i in range(features.shape[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
