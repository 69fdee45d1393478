"""Input validation shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

UNLABELED = -1


def check_semi_supervised(X, y):
    """Validate ``X`` and a label vector where ``-1`` marks unlabeled rows.

    Returns float64 ``X``, the integer label vector and the boolean labeled mask.
    """
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise ValueError(f"y must be 1-D with {len(X)} entries, got shape {y.shape}")
    if y.dtype.kind == "f":
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ValueError("labels must be integers (-1 for unlabeled rows)")
    elif y.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    y = y.astype(int)
    if np.any(y < UNLABELED):
        raise ValueError("labels must be >= 0, or -1 for unlabeled rows")
    labeled = y != UNLABELED
    if not labeled.any():
        raise ValueError("at least one labeled row is required")
    return X, y, labeled


def check_features(X, n_features: int):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, but the model expects {n_features}")
    return X
