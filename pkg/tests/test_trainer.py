import numpy as np
import pytest

from oracles import kl_from_logits, mlp_rows, random_instance
from tras.data import make_longtail_benchmark
from tras.losses import AdjustmentSchedule, ce_loss, da_ce_loss, softmax, transform_teacher_logits
from tras.model import ModelParams
from tras.trainer import (
    SSL_TERMS,
    TERMS,
    TRAS_TERMS,
    Batch,
    OptimizerState,
    TrainConfig,
    adam_step,
    ema_update,
    loss_and_grads,
    ssl_loss,
    total_loss_and_grads,
    train,
    tras_loss,
)


def small_problem(seed=0):
    return make_longtail_benchmark(n1=60, gamma=6, num_classes=3, feature_dim=2,
                                   separation=3.0, test_per_class=20, seed=seed)


SMALL = dict(epochs=4, warmup_epochs=1, batches_per_epoch=3, batch_size=8, hidden_dims=(6,))


def with_unlabeled(seed):
    rng = np.random.default_rng(seed)
    while True:
        inst = random_instance(rng)
        if len(inst[1].weak):
            return inst


class TestSSLLoss:
    def test_empty_unlabeled_batch_is_supervised_only(self):
        params, batch, prior, config = with_unlabeled(1)
        value, terms = ssl_loss(params, (batch.labeled_X, batch.labeled_y),
                                (np.zeros((0, 3)), np.zeros((0, 3))), prior, config)
        assert terms["ssl_unsup"] == 0 and value == terms["ssl_sup"]

    def test_unconfident_teacher_gives_zero_unsupervised_term(self):
        params, batch, prior, config = with_unlabeled(2)
        _, terms = ssl_loss(params, (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong),
                            prior, config.replace(threshold=1.0))
        assert terms["ssl_unsup"] == 0.0

    def test_single_confident_example_by_hand(self):
        params, batch, prior, config = with_unlabeled(3)
        config = config.replace(threshold=0.34, reduction="sum")
        weak, strong = batch.weak[:1], batch.strong[:1]
        _, terms = ssl_loss(params, (batch.labeled_X, batch.labeled_y), (weak, strong), prior, config)
        arrays = params.arrays()
        n = len(params.backbone)
        _, zt_w, _ = mlp_rows(arrays, n, weak)
        _, zt_s, _ = mlp_rows(arrays, n, strong)
        scores = zt_w[0] if config.disable_teacher_transform else zt_w[0] - prior.log_probs
        assert softmax(scores).max() >= 0.34
        assert terms["ssl_unsup"] == pytest.approx(ce_loss(scores.argmax(), zt_s[0]), abs=1e-12)
        _, zt_l, _ = mlp_rows(arrays, n, batch.labeled_X)
        expected_sup = sum(ce_loss(y, z) for y, z in zip(batch.labeled_y, zt_l))
        assert terms["ssl_sup"] == pytest.approx(expected_sup, abs=1e-12)


class TestTRASLoss:
    def test_identical_heads_and_identity_transform_give_zero_kl(self):
        params, batch, prior, config = with_unlabeled(4)
        params = ModelParams(params.backbone, params.teacher_head,
                             tuple(a.copy() for a in params.teacher_head))
        config = config.replace(A=0.0, B=0.0, disable_student_mask=True)
        _, terms = tras_loss(params, (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong),
                             prior, config)
        assert terms["tras_unsup"] == pytest.approx(0.0, abs=1e-12)

    def test_removing_mask_adds_nonnegative_terms(self):
        params, batch, prior, config = with_unlabeled(5)
        masked = config.replace(threshold=1.0, disable_student_mask=False)
        v_mask, t_mask = tras_loss(params, (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong),
                                   prior, masked)
        v_all, _ = tras_loss(params, (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong),
                             prior, masked.replace(disable_student_mask=True))
        assert t_mask["tras_unsup"] == 0 and v_all > v_mask

    def test_single_example_reassembled_from_primitives(self):
        params, batch, prior, config = with_unlabeled(6)
        config = config.replace(disable_student_mask=True, reduction="sum")
        weak, strong = batch.weak[:1], batch.strong[:1]
        value, _ = tras_loss(params, (batch.labeled_X, batch.labeled_y), (weak, strong), prior, config)
        arrays, n = params.arrays(), len(params.backbone)
        _, zt_w, zs_w = mlp_rows(arrays, n, weak)
        _, _, zs_l = mlp_rows(arrays, n, batch.labeled_X)
        scores = zt_w[0] if config.disable_teacher_transform else zt_w[0] - prior.log_probs
        target = transform_teacher_logits(zt_w[0], scores.argmax(), prior,
                                          AdjustmentSchedule.from_prior(prior, config.A, config.B))
        tau = 0.0 if config.use_plain_ce_labeled else config.tau_labeled
        expected = sum(da_ce_loss(y, z, prior, tau) for y, z in zip(batch.labeled_y, zs_l))
        expected += kl_from_logits(target, zs_w[0])
        assert abs(value - expected) < 1e-12


class TestTotalLoss:
    def test_warmup_value_is_ssl_only(self):
        params, batch, prior, config = with_unlabeled(7)
        config = config.replace(warmup_epochs=10, epochs=20)
        step = total_loss_and_grads(params, batch, prior, config, epoch=0)
        ssl, _ = ssl_loss(params, (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong), prior, config)
        assert step.value == ssl
        # the student head still learns from labeled data, but the backbone does not
        only_ssl = loss_and_grads(params, batch, prior, config, SSL_TERMS)
        for a, b in zip(step.grads.backbone, only_ssl.grads.backbone):
            np.testing.assert_array_equal(a[0], b[0])
        assert np.any(step.grads.student_head[0] != 0)

    def test_after_warmup_value_is_sum_of_parts(self):
        params, batch, prior, config = with_unlabeled(8)
        config = config.replace(warmup_epochs=0)
        step = total_loss_and_grads(params, batch, prior, config, epoch=0)
        lab, unl = (batch.labeled_X, batch.labeled_y), (batch.weak, batch.strong)
        total = ssl_loss(params, lab, unl, prior, config)[0] + tras_loss(params, lab, unl, prior, config)[0]
        assert abs(step.value - total) < 1e-12

    @pytest.mark.parametrize("mode", ["shared", "tras_minus"])
    def test_gradient_is_sum_of_part_gradients(self, mode):
        params, batch, prior, config = with_unlabeled(9)
        config = config.replace(mode=mode)
        whole = loss_and_grads(params, batch, prior, config, TERMS).grads
        parts = [loss_and_grads(params, batch, prior, config, {t}).grads for t in TERMS]
        for k, a in enumerate(whole.arrays()):
            np.testing.assert_allclose(a, sum(p.arrays()[k] for p in parts), atol=1e-12, rtol=0)

    def test_unknown_term_rejected(self):
        params, batch, prior, config = with_unlabeled(10)
        with pytest.raises(ValueError, match="unknown loss terms"):
            loss_and_grads(params, batch, prior, config, {"focal"})

    def test_raising_threshold_never_admits_more_examples(self):
        params, batch, prior, config = with_unlabeled(11)
        prev_ssl = prev_student = None
        for t in (0.34, 0.5, 0.7, 0.9, 1.0):
            r = loss_and_grads(params, batch, prior, config.replace(threshold=t, disable_student_mask=False),
                               TERMS, with_grads=False)
            if prev_ssl is not None:
                assert r.ssl_mask.sum() <= prev_ssl and r.student_mask.sum() <= prev_student
            prev_ssl, prev_student = r.ssl_mask.sum(), r.student_mask.sum()


class TestAdamAndEMA:
    def _scalar(self, value):
        return ModelParams([], (np.array([[value]]), np.zeros(1)), (np.zeros((1, 1)), np.zeros(1)))

    def test_zero_gradient_is_fixed_point(self):
        p = self._scalar(1.5)
        new, state = adam_step(p, p.zeros_like(), OptimizerState.zeros(p), 0.002)
        assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), p.arrays())) and state.step == 1

    def test_first_step_hand_value(self):
        # m_hat = g, v_hat = g^2  ->  update = -lr * g / (|g| + eps)
        p = self._scalar(0.0)
        g = self._scalar(0.5)
        new, _ = adam_step(p, g, OptimizerState.zeros(p), 0.002)
        assert new.teacher_head[0][0, 0] == pytest.approx(-0.002 * 0.5 / (0.5 + 1e-8), rel=1e-12)

    def test_identical_parameters_follow_identical_trajectories(self):
        p = ModelParams([], (np.array([[0.3, 0.3]]), np.zeros(1)), (np.zeros((1, 2)), np.zeros(1)))
        state = OptimizerState.zeros(p)
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = p.zeros_like()
            g.teacher_head[0][:] = rng.normal()
            p, state = adam_step(p, g, state, 0.01)
        assert p.teacher_head[0][0, 0] == p.teacher_head[0][0, 1]

    def test_ema(self):
        p = self._scalar(1.0)
        assert ema_update(p, p, 0.999).teacher_head[0][0, 0] == 1.0
        zero = self._scalar(0.0)
        assert ema_update(zero, p, 0.0).teacher_head[0][0, 0] == 1.0
        e = ema_update(ema_update(zero, p, 0.5), p, 0.5)
        assert e.teacher_head[0][0, 0] == 0.75


class TestConfig:
    @pytest.mark.parametrize("kw,key", [
        (dict(threshold=1.5), "threshold"), (dict(threshold=0.0), "threshold"),
        (dict(ema_decay=1.0), "ema_decay"), (dict(warmup_epochs=5, epochs=3), "warmup_epochs"),
        (dict(mode="distill"), "mode"), (dict(A=-1.0), "A"),
    ])
    def test_invalid(self, kw, key):
        with pytest.raises(ValueError, match=key):
            TrainConfig(**kw)

    def test_defaults_follow_published_setup(self):
        c = TrainConfig()
        assert (c.A, c.B, c.threshold, c.learning_rate, c.ema_decay) == (2.0, 2.0, 0.95, 0.002, 0.999)


class TestTrain:
    def test_deterministic_log_and_params(self):
        ds, test = small_problem()
        a = train(ds, TrainConfig(**SMALL), test_set=test)
        b = train(ds, TrainConfig(**SMALL), test_set=test)
        assert a.log == b.log
        assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))
        assert len(a.log) == SMALL["epochs"] and {"losses", "pseudo_label", "test_ema"} <= set(a.log[0])

    def test_warmup_only_run_matches_fixmatch_teacher(self):
        ds, _ = small_problem(1)
        cfg = TrainConfig(**{**SMALL, "warmup_epochs": SMALL["epochs"]})
        a = train(ds, cfg)
        # a second run that differs only in the student settings must not change the teacher
        b = train(ds, cfg.replace(A=5.0, B=0.0, use_plain_ce_labeled=True, tau_labeled=3.0))
        for x, y in zip(a.params.arrays()[:-2], b.params.arrays()[:-2]):
            np.testing.assert_array_equal(x, y)

    @pytest.mark.parametrize("mode", ["shared", "two_stage", "tras_minus"])
    def test_modes_run_and_stay_finite(self, mode):
        ds, test = small_problem(2)
        r = train(ds, TrainConfig(**SMALL, mode=mode), test_set=test)
        assert r.params.is_finite() and r.ema_params.is_finite()
        assert len(r.log) == SMALL["epochs"] * (2 if mode == "two_stage" else 1)

    def test_lr_decay_variant(self):
        ds, _ = small_problem(3)
        r = train(ds, TrainConfig(**SMALL, decay_target="lr"))
        assert all(np.array_equal(x, y) for x, y in zip(r.params.arrays(), r.ema_params.arrays()))

    def test_supervised_only_when_no_unlabeled_data(self):
        ds, _ = small_problem(4)
        from tras.data import Dataset
        sup = Dataset(ds.labeled_X, ds.labeled_y, np.zeros((0, 2)), ds.num_classes)
        r = train(sup, TrainConfig(**SMALL))
        assert r.log[-1]["losses"]["ssl_unsup"] == 0 and r.log[-1]["losses"]["tras_unsup"] == 0
