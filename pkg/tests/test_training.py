import math

import numpy as np
import pytest

from camforge.core import Parameter, Tape, Tensor, ops
from camforge.errors import ConfigurationError, InputError
from camforge.features import fbank
from camforge.model import build_model
from camforge.training import (
    SGD,
    AamConfig,
    ScheduleConfig,
    aam_softmax_loss,
    lr_schedule,
    sgd_step,
    synthetic_speakers,
    toy_fit,
)


def _softmax_ce(logits, labels):
    logits = np.asarray(logits, np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels].mean()


class TestAam:
    def test_degenerate_is_plain_ce(self, f64, rng):
        emb = Tensor(rng.standard_normal((6, 5)))
        w = Tensor(rng.standard_normal((4, 5)))
        labels = rng.integers(0, 4, 6)
        loss = aam_softmax_loss(emb, labels, w, AamConfig(margin=0.0, scale=1.0, num_classes=4))
        cos = (emb.data / np.linalg.norm(emb.data, axis=1, keepdims=True)) @ (
            w.data / np.linalg.norm(w.data, axis=1, keepdims=True)
        ).T
        assert abs(float(loss.data) - _softmax_ce(cos, labels)) < 1e-12

    def test_aligned_target_logit(self, f64):
        cos = Tensor(np.array([[1.0, 0.0]]))
        logits = ops.aam_logits(cos, np.array([0]), 0.2, 32.0).data
        oracle = 32.0 * math.cos(0.2)
        assert abs(oracle - 31.362) < 1e-3
        assert abs(logits[0, 0] - oracle) < 1e-12
        assert logits[0, 1] == 0.0

    def test_margin_raises_loss(self, rng):
        emb = Tensor(rng.standard_normal((4, 8)).astype(np.float32))
        w = Tensor(rng.standard_normal((3, 8)).astype(np.float32))
        labels = [0, 1, 2, 0]
        plain = aam_softmax_loss(emb, labels, w, AamConfig(0.0, 32.0, 3))
        margin = aam_softmax_loss(emb, labels, w, AamConfig(0.2, 32.0, 3))
        assert float(margin.data) > float(plain.data)

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            aam_softmax_loss(Tensor(np.ones((1, 3))), [2], Tensor(np.ones((2, 3))), AamConfig(num_classes=2))

    def test_bad_margin(self):
        with pytest.raises(ConfigurationError):
            AamConfig(margin=2.0)


class TestSchedule:
    cfg = ScheduleConfig(warmup_steps=10, total_steps=110)

    def test_published_endpoints(self):
        assert lr_schedule(10, self.cfg) == pytest.approx(0.1, abs=1e-15)
        assert lr_schedule(110, self.cfg) == pytest.approx(1e-4, abs=1e-15)

    def test_cosine_midpoint(self):
        assert lr_schedule(60, self.cfg) == pytest.approx(0.05005, abs=1e-12)

    def test_warmup_linear_from_zero(self):
        assert lr_schedule(0, self.cfg) == 0.0
        assert lr_schedule(5, self.cfg) == pytest.approx(0.05)

    def test_shape(self):
        lrs = [lr_schedule(s, self.cfg) for s in range(111)]
        assert all(a <= b for a, b in zip(lrs[:10], lrs[1:11]))
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
        assert max(abs(a - b) for a, b in zip(lrs, lrs[1:])) <= 0.01 + 1e-12

    def test_out_of_range(self):
        with pytest.raises(InputError):
            lr_schedule(111, self.cfg)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            ScheduleConfig(warmup_steps=5, total_steps=5)


class TestSgd:
    def test_zero_grad_no_decay_unchanged(self):
        p = Parameter([1.0, -2.0])
        sgd_step([p], lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_weight_decay_closed_form(self, f64):
        p = Parameter([1.0, -2.0])
        sgd_step([p], lr=0.1, weight_decay=1e-2)
        np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 1e-2), rtol=1e-15)

    def test_two_step_momentum(self, f64):
        g, lr = 0.7, 0.05

        # scalar oracle of the velocity recurrence
        w, v = 0.0, 0.0
        for _ in range(2):
            v = 0.9 * v + g
            w -= lr * v
        assert w == pytest.approx(-lr * 2.9 * g, rel=1e-15)

        p = Parameter([0.0])
        opt = None
        for _ in range(2):
            p.grad[...] = g
            opt = sgd_step([p], lr, momentum=0.9, weight_decay=0.0, optimizer=opt)
        assert p.data[0] == pytest.approx(w, rel=1e-12)

    def test_grad_cleared_after_step(self):
        p = Parameter([1.0])
        p.grad[...] = 3.0
        SGD([p]).step(0.1)
        assert p.grad[0] == 0


@pytest.fixture(scope="module")
def small_set():
    data = synthetic_speakers(2, 2, seconds=0.5, seed=1)
    return [(fbank(a).data, spk) for a, spk in data]


class TestToyFit:
    def test_single_class(self, small_set):
        data = [(f, 0) for f, _ in small_set]
        with pytest.raises(ConfigurationError):
            toy_fit(build_model("tiny"), data, ScheduleConfig(total_steps=2), 1)

    def test_zero_lr_constant_trace(self, small_set):
        sched = ScheduleConfig(lr_max=0.0, lr_min=0.0, total_steps=4)
        losses = toy_fit(build_model("tiny"), small_set, sched, 4, crop_frames=1000).losses
        assert len(set(losses)) == 1

    def test_fixed_seed_identical(self, small_set):
        sched = ScheduleConfig(warmup_steps=1, total_steps=4)
        a = toy_fit(build_model("tiny", seed=2), small_set, sched, 4, seed=9, crop_frames=30).losses
        b = toy_fit(build_model("tiny", seed=2), small_set, sched, 4, seed=9, crop_frames=30).losses
        assert a == b

    def test_small_step_decreases_loss(self, small_set):
        model = build_model("tiny", seed=0)
        feats = np.stack([f for f, _ in small_set])
        labels = [s for _, s in small_set]
        w = Parameter(np.random.default_rng(0).standard_normal((2, model.config.embedding_dim)))
        model.train()

        def loss_now():
            with Tape() as tape:
                loss = aam_softmax_loss(model(Tensor(feats)), labels, w, AamConfig())
            return tape, loss

        tape, loss0 = loss_now()
        tape.backward(loss0)
        sgd_step(model.parameters() + [w], 1e-3, momentum=0.0, weight_decay=0.0)
        _, loss1 = loss_now()
        assert float(loss1.data) < float(loss0.data)

    def test_crops_to_common_length(self, small_set):
        data = [(f[:, : 30 + 5 * i], s) for i, (f, s) in enumerate(small_set)]
        result = toy_fit(build_model("tiny"), data, ScheduleConfig(total_steps=2), 2, crop_frames=300)
        assert len(result.losses) == 2 and all(np.isfinite(result.losses))
