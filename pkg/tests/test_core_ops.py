import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camforge.core import Parameter, Tape, Tensor, backward, ops
from camforge.errors import ConfigurationError, CorruptWeightsError, NumericalError, UsageError


def T(x, **kw):
    return Tensor(np.asarray(x, dtype=np.float32), **kw)


class TestConv1d:
    def test_unit_kernel_scales(self):
        out = ops.conv1d(T([[1, 2, 3]]), T([[[2]]]))
        np.testing.assert_array_equal(out.data, [[2, 4, 6]])

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((3, 7)).astype(np.float32)
        w = np.zeros((3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[c, c] = [0, 1, 0]
        out = ops.conv1d(T(x), T(w), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_dilated_taps(self):
        out = ops.conv1d(T([[1, 0, 0, 0, 1]]), T([[[1, 1, 1]]]), dilation=2)
        np.testing.assert_array_equal(out.data, [[2]])

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.conv1d(T(np.ones((2, 5))), T(np.ones((1, 3, 1))))

    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            ops.conv1d(T(np.ones((1, 2))), T(np.ones((1, 1, 3))))

    def test_matches_direct_sum(self, rng):
        x = rng.standard_normal((2, 3, 11)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = ops.conv1d(T(x), T(w), T(b), stride=2, dilation=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
        ref = np.zeros_like(out)
        for n in range(2):
            for o in range(4):
                for t in range(out.shape[-1]):
                    ref[n, o, t] = b[o] + sum(
                        w[o, c, k] * xp[n, c, 2 * t + 2 * k] for c in range(3) for k in range(3)
                    )
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)


class TestConv2d:
    def test_unit_kernel_doubles(self, rng):
        x = rng.standard_normal((1, 4, 5)).astype(np.float32)
        out = ops.conv2d(T(x), T([[[[2.0]]]]))
        np.testing.assert_array_equal(out.data, 2 * x)

    def test_all_ones(self):
        out = ops.conv2d(T(np.ones((1, 3, 3))), T(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.data, [[[9.0]]])

    def test_strided_freq_extent(self):
        out = ops.conv2d(T(np.ones((1, 8, 4))), T(np.ones((2, 1, 3, 3))), stride_f=2, padding_f=1, padding_t=1)
        assert out.shape == (2, 4, 4)

    def test_matches_direct_sum(self, rng):
        x = rng.standard_normal((2, 5, 6)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 2)).astype(np.float32)
        out = ops.conv2d(T(x), T(w), stride_f=2, padding_f=1, padding_t=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for o in range(3):
            for i in range(out.shape[1]):
                for j in range(out.shape[2]):
                    ref[o, i, j] = (w[o] * xp[:, 2 * i : 2 * i + 3, j : j + 2]).sum()
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)


class TestBatchNorm:
    def _params(self, c):
        return T(np.ones(c)), T(np.zeros(c)), np.zeros(c, np.float32), np.ones(c, np.float32)

    def test_identity_infer(self, rng):
        x = rng.standard_normal((2, 3, 4)).astype(np.float32)
        g, b, rm, rv = self._params(3)
        out = ops.batchnorm(T(x), g, b, rm, rv, training=False, eps=0.0)
        np.testing.assert_array_equal(out.data, x)

    def test_input_at_running_mean_gives_beta(self):
        rm = np.array([1.0, -2.0], np.float32)
        rv = np.array([4.0, 0.5], np.float32)
        beta = T([0.3, -0.7])
        x = np.broadcast_to(rm[:, None], (2, 5)).copy()
        out = ops.batchnorm(T(x), T([2.0, 3.0]), beta, rm, rv, channel_axis=0)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta.data[:, None], (2, 5)))

    def test_train_normalises_and_updates(self, rng):
        x = (3 + 2 * rng.standard_normal((4, 3, 6))).astype(np.float32)
        g, b, rm, rv = self._params(3)
        out = ops.batchnorm(T(x), g, b, rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1, atol=1e-4)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)), rtol=1e-5)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1), rtol=1e-5)

    def test_negative_running_var(self):
        g, b, rm, rv = self._params(2)
        rv[1] = -1
        with pytest.raises(CorruptWeightsError):
            ops.batchnorm(T(np.ones((1, 2, 3))), g, b, rm, rv)


class TestLinearAndActivations:
    def test_identity(self, rng):
        x = rng.standard_normal((5, 3)).astype(np.float32)
        np.testing.assert_array_equal(ops.linear(T(x), T(np.eye(3))).data, x)

    def test_zero_weight_bias_broadcast(self):
        out = ops.linear(T(np.ones((4, 3))), T(np.zeros((2, 3))), T([1.5, -2.0]))
        np.testing.assert_array_equal(out.data, np.tile([1.5, -2.0], (4, 1)))

    def test_hand_product(self):
        x, w = [1.0, 2.0], [[1.0, 1.0], [1.0, -1.0]]
        oracle = [sum(wi * xi for wi, xi in zip(row, x)) for row in w]
        out = ops.linear(T(x), T(w), T([0, 0]))
        assert oracle == [3.0, -1.0]
        np.testing.assert_array_equal(out.data, oracle)

    def test_width_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.linear(T(np.ones(3)), T(np.ones((2, 4))))

    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(T([-1, 0, 2])).data, [0, 0, 2])

    def test_sigmoid(self):
        assert ops.sigmoid(T([0.0])).data[0] == 0.5
        assert abs(1.0 - float(ops.sigmoid(T([30.0])).data[0])) <= 1e-9
        s = ops.sigmoid(T(np.linspace(-15, 15, 101))).data
        assert ((s > 0) & (s < 1)).all()

    def test_non_finite_is_error(self):
        with pytest.raises(NumericalError):
            ops.mul(T([np.inf]), T([1.0]))


class TestTape:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones(4))

    def test_square_gradient(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss, tape)
        assert x.grad[0] == 6.0

    def test_accumulates_and_unreached_stay_zero(self):
        x = Parameter([1.0, 2.0], name="x")
        unused = Parameter([5.0], name="unused")
        for _ in range(2):
            with Tape() as tape:
                loss = ops.sum(x)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2, 2])
        np.testing.assert_array_equal(unused.grad, [0])

    def test_backward_without_tape(self):
        x = Tensor([1.0], requires_grad=True)
        loss = ops.sum(x)
        with pytest.raises(UsageError):
            backward(loss)
        with pytest.raises(UsageError):
            Tape().backward(loss)

    def test_visits_each_op_once_in_reverse(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.relu(ops.mul(x, x))
            loss = ops.sum(ops.add(y, x))
        tape.backward(loss)
        assert tape.visited == [r.op for r in reversed(tape.records)]
        assert tape.visited == ["sum", "add", "relu", "mul"]

    def test_replay_refused(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        with pytest.raises(UsageError):
            tape.backward(loss)


class TestInvariants:
    def test_determinism(self, rng):
        x = rng.standard_normal((2, 4, 20)).astype(np.float32)
        w = rng.standard_normal((5, 4, 3)).astype(np.float32)
        a = ops.conv1d(T(x), T(w), padding=2, dilation=2).data
        b = ops.conv1d(T(x), T(w), padding=2, dilation=2).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("scale", [-3.0, 0.5, 7.0])
    def test_linearity(self, rng, scale):
        x = rng.standard_normal((3, 16)).astype(np.float32)
        w1 = rng.standard_normal((2, 3, 3)).astype(np.float32)
        w2 = rng.standard_normal((2, 3, 2, 2)).astype(np.float32)
        wl = rng.standard_normal((4, 16)).astype(np.float32)
        for op in (
            lambda v: ops.conv1d(T(v), T(w1), padding=1),
            lambda v: ops.conv2d(T(v[None]), T(w2[:, :1])),
            lambda v: ops.linear(T(v), T(wl)),
        ):
            np.testing.assert_allclose(op(scale * x).data, scale * op(x).data, rtol=1e-5, atol=1e-5)

    @settings(max_examples=60, deadline=None)
    @given(
        t=st.integers(1, 40),
        k=st.integers(1, 5),
        stride=st.integers(1, 3),
        dilation=st.integers(1, 3),
        padding=st.integers(0, 4),
    )
    def test_conv1d_shape_formula(self, t, k, stride, dilation, padding):
        span = dilation * (k - 1) + 1
        if t + 2 * padding < span:
            return
        out = ops.conv1d(T(np.ones((2, t))), T(np.ones((3, 2, k))), None, stride, dilation, padding)
        assert out.shape == (3, (t + 2 * padding - span) // stride + 1)

    @settings(max_examples=60, deadline=None)
    @given(
        f=st.integers(1, 20),
        t=st.integers(1, 20),
        kf=st.integers(1, 3),
        kt=st.integers(1, 3),
        sf=st.integers(1, 3),
        stt=st.integers(1, 3),
        pf=st.integers(0, 2),
        pt=st.integers(0, 2),
    )
    def test_conv2d_shape_formula(self, f, t, kf, kt, sf, stt, pf, pt):
        if f + 2 * pf < kf or t + 2 * pt < kt:
            return
        out = ops.conv2d(T(np.ones((1, f, t))), T(np.ones((2, 1, kf, kt))), None, sf, stt, pf, pt)
        assert out.shape == (2, (f + 2 * pf - kf) // sf + 1, (t + 2 * pt - kt) // stt + 1)
