"""scikit-learn compatible wrapper around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .losses import ClassPrior, softmax
from .metrics import ClassGrouping
from .model import export_features, forward
from .trainer import TrainConfig, train
from .validation import check_features, check_semi_supervised


class TRASClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Long-tailed semi-supervised classifier with a shared backbone.

    A FixMatch teacher head and a student head sit on one MLP backbone. The
    student learns from labeled data with a logit-adjusted cross-entropy and
    imitates the teacher's pseudo-label distribution after it has been
    rebalanced toward rare classes. Predictions come from the student head.

    Parameters mirror :class:`tras.trainer.TrainConfig`; ``random_state``
    maps to its ``seed``. Extra parameters:

    class_counts : array-like of shape (n_classes,), default=None
        Known class frequencies for the prior. Estimated from the labeled
        rows when omitted.
    predict_head : {"student", "teacher"}, default="student"
    use_ema : bool, default=True
        Predict with the exponential moving average of the weights.

    ``fit`` takes the scikit-learn semi-supervised convention: ``y == -1``
    marks unlabeled rows.
    """

    def __init__(self, A=2.0, B=2.0, tau_labeled=1.0, threshold=0.95, warmup_epochs=2,
                 epochs=100, batches_per_epoch=50, batch_size=64, learning_rate=0.002,
                 ema_decay=0.999, decay_target="ema", mode="shared",
                 disable_teacher_transform=False, use_plain_ce_labeled=False,
                 disable_student_mask=False, reduction="sum", hidden_dims=(64, 64),
                 weak_std=0.05, strong_std=0.2, mask_rate=0.2, prior_smoothing=0.0,
                 class_counts=None, predict_head="student", use_ema=True, random_state=0):
        self.A = A
        self.B = B
        self.tau_labeled = tau_labeled
        self.threshold = threshold
        self.warmup_epochs = warmup_epochs
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.decay_target = decay_target
        self.mode = mode
        self.disable_teacher_transform = disable_teacher_transform
        self.use_plain_ce_labeled = use_plain_ce_labeled
        self.disable_student_mask = disable_student_mask
        self.reduction = reduction
        self.hidden_dims = hidden_dims
        self.weak_std = weak_std
        self.strong_std = strong_std
        self.mask_rate = mask_rate
        self.prior_smoothing = prior_smoothing
        self.class_counts = class_counts
        self.predict_head = predict_head
        self.use_ema = use_ema
        self.random_state = random_state

    def to_config(self) -> TrainConfig:
        params = self.get_params()
        kwargs = {k: params[k] for k in TrainConfig.field_names() if k in params}
        return TrainConfig(seed=self.random_state, **kwargs)

    @classmethod
    def from_config(cls, config: TrainConfig, **extra) -> "TRASClassifier":
        kwargs = {k: getattr(config, k) for k in TrainConfig.field_names() if k != "seed"}
        return cls(random_state=config.seed, **kwargs, **extra)

    def fit(self, X, y, *, unlabeled_truth=None, eval_set=None, grouping=None):
        """Train on labeled and unlabeled rows.

        unlabeled_truth : true labels of the ``y == -1`` rows, in their order.
            Used only for pseudo-label diagnostics in ``train_log_``.
        eval_set : ``(X_test, y_test)`` scored after every epoch.
        """
        if self.predict_head not in ("student", "teacher"):
            raise ValueError("predict_head must be 'student' or 'teacher'")
        config = self.to_config()
        X, y, labeled = check_semi_supervised(X, y)
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) < 2:
            raise ValueError("need labeled examples from at least 2 classes")
        self.n_features_in_ = X.shape[1]
        L = len(self.classes_)

        hidden = np.full(int((~labeled).sum()), -1)
        if unlabeled_truth is not None:
            truth = np.asarray(unlabeled_truth)
            if len(truth) != len(hidden):
                raise ValueError("unlabeled_truth must have one entry per unlabeled row")
            known = np.isin(truth, self.classes_)
            hidden[known] = np.searchsorted(self.classes_, truth[known])
        dataset = Dataset(X[labeled], np.searchsorted(self.classes_, y[labeled]), X[~labeled], L, hidden)

        prior = None
        if self.class_counts is not None:
            prior = ClassPrior.from_counts(self.class_counts, smoothing=self.prior_smoothing)
            if prior.num_classes != L:
                raise ValueError(f"class_counts has {prior.num_classes} entries for {L} classes")
        test_set = None
        if eval_set is not None:
            Xt = check_features(eval_set[0], self.n_features_in_)
            test_set = (Xt, np.searchsorted(self.classes_, np.asarray(eval_set[1])))

        result = train(dataset, config, test_set=test_set, grouping=grouping, prior=prior,
                       eval_head=self.predict_head)
        self.params_ = result.params
        self.ema_params_ = result.ema_params
        self.prior_ = result.prior
        self.train_log_ = result.log
        self.optimizer_state_ = result.optimizer
        self.grouping_ = grouping or ClassGrouping.default(L, result.prior.counts)
        return self

    def _inference_params(self):
        check_is_fitted(self, "params_")
        return self.ema_params_ if self.use_ema else self.params_

    def decision_function(self, X):
        params = self._inference_params()
        X = check_features(X, self.n_features_in_)
        out = forward(params, X)
        return out.student_logits if self.predict_head == "student" else out.teacher_logits

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X):
        """Backbone features of each row."""
        params = self._inference_params()
        return export_features(params, check_features(X, self.n_features_in_))
