"""Per-example losses, class-prior utilities and the teacher logit transform.

All functions accept a single logit vector of shape ``(L,)`` or a batch of
shape ``(n, L)`` and reduce over the last axis. Natural logarithms throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KL_EPS = 1e-12


class DegeneratePriorError(ValueError):
    """Raised when a class prior would contain a zero probability."""


@dataclass(frozen=True)
class ClassPrior:
    """Per-class counts ``N_l`` and the normalized prior ``pi``."""

    counts: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray = field(repr=False)

    @classmethod
    def from_counts(cls, counts, smoothing: float = 0.0) -> "ClassPrior":
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("need counts for at least 2 classes")
        if np.any(counts < 0):
            raise ValueError("class counts must be nonnegative")
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        if smoothing == 0 and np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise DegeneratePriorError(
                f"degenerate prior: classes {empty} have zero count "
                "(log prior undefined); pass smoothing > 0"
            )
        smoothed = counts + smoothing
        probs = smoothed / smoothed.sum()
        return cls(counts=counts, probs=probs, log_probs=np.log(probs))

    @property
    def num_classes(self) -> int:
        return self.probs.size


def estimate_class_prior(labels, num_classes: int, smoothing: float = 0.0) -> ClassPrior:
    """Estimate ``pi`` from observed labels, optionally Laplace-smoothed."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    return ClassPrior.from_counts(counts, smoothing=smoothing)


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _pick(logp: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if logp.ndim == 1:
        return logp[y]
    return np.take_along_axis(logp, y.reshape(-1, 1), axis=-1)[:, 0]


def ce_loss(y, z):
    """Softmax cross-entropy ``-log softmax(z)[y]``."""
    return -_pick(log_softmax(z), y)


def adjusted_logits(z, prior: ClassPrior, tau) -> np.ndarray:
    """``z + tau * log(pi)``; ``tau`` may be a scalar or one value per row."""
    z = np.asarray(z, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 1:
        tau = tau[:, None]
    return z + tau * prior.log_probs


def da_ce_loss(y, z, prior: ClassPrior, tau=1.0):
    """Distribution-aware cross-entropy: CE on logits shifted by ``tau*log(pi)``."""
    return ce_loss(y, adjusted_logits(z, prior, tau))


def kl_div(p, q):
    """``KL(p || q)`` with ``q`` clamped at 1e-12 and ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.maximum(np.asarray(q, dtype=float), KL_EPS)
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def kl_div_logits(p, z):
    """``KL(p || softmax(z))`` computed through ``log_softmax``.

    No clamp is needed on the second argument, so the value stays smooth and its
    gradient in ``z`` is exactly ``softmax(z) - p`` even when a class probability
    underflows. ``0 log 0 = 0`` on the ``p`` side.
    """
    p = np.asarray(p, dtype=float)
    log_q = log_softmax(z)
    safe_p = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * (np.log(safe_p) - log_q), 0.0).sum(axis=-1)


def alpha_weights(prior: ClassPrior) -> np.ndarray:
    """``softmax(-log pi)``, i.e. inverse prior renormalized; larger for rare classes."""
    inv = 1.0 / prior.probs
    return inv / inv.sum()


@dataclass(frozen=True)
class AdjustmentSchedule:
    """Instance-dependent scale ``tau(y_hat) = A * alpha[y_hat] + B``."""

    A: float
    B: float
    alpha: np.ndarray

    def __post_init__(self):
        if self.A < 0 or self.B < 0:
            raise ValueError("A and B must be nonnegative")

    @classmethod
    def from_prior(cls, prior: ClassPrior, A: float = 2.0, B: float = 2.0) -> "AdjustmentSchedule":
        return cls(A=float(A), B=float(B), alpha=alpha_weights(prior))


def tau_of(pseudo_label, sched: AdjustmentSchedule):
    return sched.A * sched.alpha[np.asarray(pseudo_label, dtype=int)] + sched.B


def transform_teacher_logits(z_t, pseudo_label, prior: ClassPrior, sched: AdjustmentSchedule) -> np.ndarray:
    """Flatten the teacher distribution: ``softmax(z_t - tau(y_hat) * log(pi))``.

    Rows predicted as rare classes get a larger ``tau`` and so are pushed
    further toward the tail.
    """
    tau = tau_of(pseudo_label, sched)
    return softmax(adjusted_logits(z_t, prior, -np.asarray(tau, dtype=float)))
