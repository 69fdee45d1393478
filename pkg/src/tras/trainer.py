"""Loss assembly, Adam/EMA updates and the training loop.

One optimisation step runs a single forward pass over the stacked rows
``[labeled weak | unlabeled weak | unlabeled strong]`` and turns every loss
term into a gradient on the logits of the branch it is allowed to train:

* teacher branch: labeled CE and the confidence-masked consistency CE on the
  strong views (the FixMatch objective);
* student branch: labeled distribution-aware CE and the masked KL toward the
  transformed teacher distribution. Teacher logits enter the KL as constants.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from . import losses as L
from .data import Dataset, augment_batch, data_scale
from .metrics import ClassGrouping, balancedness, evaluate, pseudo_label_quality
from .model import MODES, ModelParams, backward, forward, init_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    A: float = 2.0
    B: float = 2.0
    tau_labeled: float = 1.0
    threshold: float = 0.95
    warmup_epochs: int = 2
    epochs: int = 100
    batches_per_epoch: int = 50
    batch_size: int = 64
    learning_rate: float = 0.002
    ema_decay: float = 0.999
    # "ema": weight averaging with ema_decay; "lr": per-epoch lr *= ema_decay, no averaging
    decay_target: str = "ema"
    mode: str = "shared"
    disable_teacher_transform: bool = False
    use_plain_ce_labeled: bool = False
    disable_student_mask: bool = False
    # "sum" adds per-example terms as written; "mean" divides each term by its batch size
    reduction: str = "sum"
    hidden_dims: tuple = (64, 64)
    weak_std: float = 0.05
    strong_std: float = 0.2
    mask_rate: float = 0.2
    prior_smoothing: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self) -> None:
        def bad(key, msg):
            raise ValueError(f"{key}: {msg}")

        if not 0 < self.threshold <= 1:
            bad("threshold", "t must lie in (0,1]")
        if not 0 <= self.ema_decay < 1:
            bad("ema_decay", "must lie in [0,1)")
        if self.A < 0 or self.B < 0:
            bad("A" if self.A < 0 else "B", "must be >= 0")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            bad("warmup_epochs", "must lie in [0, epochs]")
        if self.batches_per_epoch < 1 or self.batch_size < 1:
            bad("batch_size", "batch_size and batches_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            bad("learning_rate", "must be > 0")
        if self.mode not in MODES:
            bad("mode", f"must be one of {MODES}")
        if self.decay_target not in ("ema", "lr"):
            bad("decay_target", "must be 'ema' or 'lr'")
        if self.reduction not in ("sum", "mean"):
            bad("reduction", "must be 'sum' or 'mean'")
        if any(h < 1 for h in self.hidden_dims):
            bad("hidden_dims", "all hidden sizes must be >= 1")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Batch:
    labeled_X: np.ndarray
    labeled_y: np.ndarray
    weak: np.ndarray
    strong: np.ndarray
    source_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


@dataclass
class StepResult:
    value: float
    terms: dict
    grads: ModelParams | None = None
    ssl_mask: np.ndarray | None = None
    student_mask: np.ndarray | None = None
    pseudo_label: np.ndarray | None = None


def _onehot(y, num_classes):
    out = np.zeros((len(y), num_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def teacher_scores(z_t, prior: L.ClassPrior, config: TrainConfig) -> np.ndarray:
    """Teacher scores used for pseudo-labels and the FixMatch mask.

    By default these are the logits adjusted with A=0, B=1 (``z - log pi``).
    """
    if config.disable_teacher_transform:
        return np.asarray(z_t, dtype=float)
    return L.adjusted_logits(z_t, prior, -1.0)


TERMS = ("ssl_sup", "ssl_unsup", "tras_sup", "tras_unsup")
SSL_TERMS = frozenset(TERMS[:2])
TRAS_TERMS = frozenset(TERMS[2:])


def loss_and_grads(params, batch: Batch, prior, config: TrainConfig, terms=TERMS, *,
                   teacher_params=None, block_student: bool = False,
                   with_grads: bool = True) -> StepResult:
    """Sum of the selected loss terms on one batch, with exact gradients.

    ``terms`` is any subset of :data:`TERMS`. ``teacher_params`` replaces the
    shared teacher head by a frozen network (two-stage training).
    ``block_student`` keeps student-branch gradients out of the backbone
    regardless of ``config.mode``.
    """
    terms = frozenset(terms)
    if not terms <= set(TERMS):
        raise ValueError(f"unknown loss terms {sorted(terms - set(TERMS))}")
    nl, nu = len(batch.labeled_y), len(batch.weak)
    d = params.input_dim
    X = np.vstack([batch.labeled_X.reshape(nl, d), batch.weak.reshape(nu, d), batch.strong.reshape(nu, d)])
    out = forward(params, X)
    K = params.num_classes
    lab, weak, strong = slice(0, nl), slice(nl, nl + nu), slice(nl + nu, nl + 2 * nu)
    zt, zs = out.teacher_logits, out.student_logits
    scale_l = 1.0 / nl if config.reduction == "mean" and nl else 1.0
    scale_u = 1.0 / nu if config.reduction == "mean" and nu else 1.0

    gt = np.zeros_like(zt)
    gs = np.zeros_like(zs)
    values = {}

    if teacher_params is None:
        zt_weak = zt[weak]
    else:
        zt_weak = forward(teacher_params, batch.weak.reshape(nu, d)).teacher_logits
    scores = teacher_scores(zt_weak, prior, config)
    y_hat = scores.argmax(axis=1)
    ssl_mask = L.softmax(scores).max(axis=1) >= config.threshold

    student_probs = out.student_probs[weak]
    if config.disable_student_mask:
        student_mask = np.ones(nu, dtype=bool)
    else:
        student_mask = student_probs.max(axis=1) >= config.threshold

    if "ssl_sup" in terms:
        values["ssl_sup"] = scale_l * float(L.ce_loss(batch.labeled_y, zt[lab]).sum())
        gt[lab] = scale_l * (L.softmax(zt[lab]) - _onehot(batch.labeled_y, K))
    if "ssl_unsup" in terms:
        ce_u = L.ce_loss(y_hat, zt[strong]) if nu else np.zeros(0)
        values["ssl_unsup"] = scale_u * float((ssl_mask * ce_u).sum())
        gt[strong] = scale_u * ssl_mask[:, None] * (L.softmax(zt[strong]) - _onehot(y_hat, K))
    if "tras_sup" in terms:
        tau = 0.0 if config.use_plain_ce_labeled else config.tau_labeled
        z_adj = L.adjusted_logits(zs[lab], prior, tau)
        values["tras_sup"] = scale_l * float(L.ce_loss(batch.labeled_y, z_adj).sum())
        gs[lab] = scale_l * (L.softmax(z_adj) - _onehot(batch.labeled_y, K))
    if "tras_unsup" in terms:
        # teacher logits are constants here: nothing flows into gt
        sched = L.AdjustmentSchedule.from_prior(prior, config.A, config.B)
        target = L.transform_teacher_logits(zt_weak, y_hat, prior, sched)
        kl_vals = L.kl_div_logits(target, zs[weak]) if nu else np.zeros(0)
        values["tras_unsup"] = scale_u * float((student_mask * kl_vals).sum())
        gs[weak] = scale_u * student_mask[:, None] * (student_probs - target)

    grads = None
    if with_grads:
        grads = backward(params, out, gt, gs, mode="tras_minus" if block_student else config.mode)
    return StepResult(float(sum(values.values())), values, grads, ssl_mask, student_mask, y_hat)


def ssl_loss(params, labeled_batch, unlabeled_batch, prior, config: TrainConfig):
    """FixMatch objective on the teacher branch; returns ``(value, terms)``."""
    r = loss_and_grads(params, _merge(labeled_batch, unlabeled_batch), prior, config,
                       SSL_TERMS, with_grads=False)
    return r.value, r.terms


def tras_loss(params, labeled_batch, unlabeled_batch, prior, config: TrainConfig, teacher_params=None):
    """Student objective (labeled DA-CE plus masked imitation KL); returns ``(value, terms)``."""
    r = loss_and_grads(params, _merge(labeled_batch, unlabeled_batch), prior, config,
                       TRAS_TERMS, teacher_params=teacher_params, with_grads=False)
    return r.value, r.terms


def _merge(labeled_batch, unlabeled_batch) -> Batch:
    """Build a :class:`Batch` from ``(X, y)`` and ``(weak, strong)`` pairs."""
    Xl, yl = labeled_batch
    weak, strong = unlabeled_batch
    Xl = np.asarray(Xl, dtype=float)
    d = Xl.shape[1] if Xl.ndim == 2 else np.asarray(weak).shape[-1]
    return Batch(Xl.reshape(-1, d), np.asarray(yl, dtype=int),
                 np.asarray(weak, dtype=float).reshape(-1, d),
                 np.asarray(strong, dtype=float).reshape(-1, d))


def total_loss_and_grads(params, batch: Batch, prior, config: TrainConfig, epoch: int,
                         teacher_params=None) -> StepResult:
    """Warmup: FixMatch only. Afterwards: FixMatch plus the student objective.

    During warmup the labeled DA-CE still trains the student head, with its
    gradient kept out of the backbone; it is logged as ``student_warmup`` and
    not counted in ``value``. In two-stage training ``teacher_params`` is the
    frozen first-stage model and only the student objective is optimised.
    """
    if teacher_params is not None:
        return loss_and_grads(params, batch, prior, config, TRAS_TERMS, teacher_params=teacher_params)
    if epoch < config.warmup_epochs:
        r = loss_and_grads(params, batch, prior, config, SSL_TERMS | {"tras_sup"}, block_student=True)
        r.terms["student_warmup"] = r.terms.pop("tras_sup")
        r.value = r.terms["ssl_sup"] + r.terms["ssl_unsup"]
        return r
    return loss_and_grads(params, batch, prior, config, TERMS)


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimizerState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], 0)


def adam_step(params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam; returns new ``(params, state)`` without mutating inputs."""
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return (ModelParams.from_arrays(new_p, len(params.backbone)),
            OptimizerState(new_m, new_v, t))


def ema_update(ema_params: ModelParams, params: ModelParams, decay: float) -> ModelParams:
    arrays = [decay * e + (1 - decay) * p for e, p in zip(ema_params.arrays(), params.arrays())]
    return ModelParams.from_arrays(arrays, len(params.backbone))


class _Cycler:
    """Endless reshuffled passes over ``n`` indices."""

    def __init__(self, n: int, rng):
        self.n, self.rng = n, rng
        self.order, self.pos = np.zeros(0, dtype=int), 0

    def take(self, k: int) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=int)
        out = []
        while k > 0:
            if self.pos >= len(self.order):
                self.order, self.pos = self.rng.permutation(self.n), 0
            chunk = self.order[self.pos:self.pos + k]
            out.append(chunk)
            self.pos += len(chunk)
            k -= len(chunk)
        return np.concatenate(out)


class TrainResult(NamedTuple):
    params: ModelParams
    ema_params: ModelParams
    log: list
    prior: L.ClassPrior
    optimizer: OptimizerState


def head_logits(params: ModelParams, X, head: str = "student") -> np.ndarray:
    out = forward(params, X)
    return out.student_logits if head == "student" else out.teacher_logits


def diagnostics(params, dataset: Dataset, prior, config: TrainConfig, grouping: ClassGrouping,
                teacher_params=None) -> dict:
    """Pseudo-label statistics on the clean unlabeled inputs.

    The transferred pseudo-label is the argmax of the transformed teacher
    distribution; the mask is the student confidence gate of the imitation term.
    """
    U = dataset.unlabeled_X
    if len(U) == 0:
        return {}
    out = forward(params, U)
    zt = out.teacher_logits if teacher_params is None else forward(teacher_params, U).teacher_logits
    scores = teacher_scores(zt, prior, config)
    y_hat = scores.argmax(axis=1)
    sched = L.AdjustmentSchedule.from_prior(prior, config.A, config.B)
    target = L.transform_teacher_logits(zt, y_hat, prior, sched)
    if config.disable_student_mask:
        mask = np.ones(len(U), dtype=bool)
    else:
        mask = out.student_probs.max(axis=1) >= config.threshold
    rec = {
        "ssl_mask_rate": float((L.softmax(scores).max(axis=1) >= config.threshold).mean()),
        "student_mask_rate": float(mask.mean()),
        "balancedness_raw": balancedness(L.softmax(zt)),
        "balancedness_transformed": balancedness(target),
    }
    known = dataset.unlabeled_hidden_y >= 0
    if known.any():
        q = pseudo_label_quality(dataset.unlabeled_hidden_y[known], target.argmax(axis=1)[known],
                                 mask[known], grouping)
        q.pop("undefined")
        rec["pseudo_label"] = q
    return rec


def _test_snapshot(params, test_set, grouping, head):
    X, y = test_set
    logits = head_logits(params, X, head)
    r = evaluate(y, logits.argmax(axis=1), L.softmax(logits), grouping)
    return {"overall": r.overall_accuracy, "minority": r.minority_accuracy, "gm": r.gm}


def train(dataset: Dataset, config: TrainConfig, *, test_set=None, grouping=None,
          prior: L.ClassPrior | None = None, teacher_params=None, eval_head: str = "student",
          _phase: str = "") -> TrainResult:
    """Run the full training protocol for ``config.mode``.

    ``two_stage`` first trains a FixMatch-only model, then a freshly initialised
    network whose student imitates that frozen model. Everything is a pure
    function of ``(dataset, config)``.
    """
    config.validate()
    if len(dataset.labeled_y) == 0:
        raise ValueError("training needs at least one labeled example")
    if prior is None:
        prior = L.estimate_class_prior(dataset.labeled_y, dataset.num_classes, config.prior_smoothing)
    if grouping is None:
        grouping = ClassGrouping.default(dataset.num_classes, prior.counts)

    if config.mode == "two_stage" and teacher_params is None:
        stage1 = train(dataset, config.replace(mode="shared", warmup_epochs=config.epochs),
                       test_set=test_set, grouping=grouping, prior=prior, eval_head="teacher",
                       _phase="teacher")
        stage2 = train(dataset, config, test_set=test_set, grouping=grouping, prior=prior,
                       teacher_params=stage1.ema_params, _phase="student")
        return stage2._replace(log=stage1.log + stage2.log)

    seed = config.seed
    init_seed = [seed, 0] if teacher_params is None else [seed, 1]
    params = init_params(dataset.feature_dim, config.hidden_dims, dataset.num_classes, init_seed)
    ema = params.copy()
    state = OptimizerState.zeros(params)
    sampler = np.random.default_rng([seed, 10])
    aug_rng = np.random.default_rng([seed, 11])
    lab_cycle = _Cycler(len(dataset.labeled_y), sampler)
    unl_cycle = _Cycler(len(dataset.unlabeled_X), sampler)
    scale = data_scale(dataset.labeled_X)
    aug = dict(scale=scale, weak_std=config.weak_std, strong_std=config.strong_std,
               mask_rate=config.mask_rate)

    records = []
    for epoch in range(config.epochs):
        lr = config.learning_rate
        if config.decay_target == "lr":
            lr *= config.ema_decay ** epoch
        sums: dict = {}
        for _ in range(config.batches_per_epoch):
            li = lab_cycle.take(config.batch_size)
            ui = unl_cycle.take(config.batch_size)
            Xu = dataset.unlabeled_X[ui].reshape(len(ui), dataset.feature_dim)
            batch = Batch(
                augment_batch(dataset.labeled_X[li], "weak", aug_rng, **aug),
                dataset.labeled_y[li],
                augment_batch(Xu, "weak", aug_rng, **aug),
                augment_batch(Xu, "strong", aug_rng, **aug),
                ui,
            )
            step = total_loss_and_grads(params, batch, prior, config, epoch, teacher_params)
            params, state = adam_step(params, step.grads, state, lr)
            if config.decay_target == "ema":
                ema = ema_update(ema, params, config.ema_decay)
            else:
                ema = params
            for k, v in step.terms.items():
                sums[k] = sums.get(k, 0.0) + v
            sums["total"] = sums.get("total", 0.0) + step.value

        rec = {"epoch": epoch, "phase": _phase or config.mode,
               "losses": {k: v / config.batches_per_epoch for k, v in sums.items()}}
        rec.update(diagnostics(params, dataset, prior, config, grouping, teacher_params))
        if test_set is not None:
            rec["test_ema"] = _test_snapshot(ema, test_set, grouping, eval_head)
            rec["test_raw"] = _test_snapshot(params, test_set, grouping, eval_head)
        if not (params.is_finite() and np.isfinite(rec["losses"]["total"])):
            raise FloatingPointError(f"non-finite parameters or loss at epoch {epoch}")
        records.append(rec)
        log.debug("epoch %d %s", epoch, rec["losses"])
    return TrainResult(params, ema, records, prior, state)
