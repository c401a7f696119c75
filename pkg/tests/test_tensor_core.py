import math

import numpy as np
import pytest

from src.errors import DimensionError, LabelError, NumericError, UsageError
from src.metrics.labelmap import LabelMap
from src.tensor import ops
from src.tensor.core import (
    Tensor,
    backward,
    count_macs,
    get_all_primitives,
    get_primitive,
    no_grad,
    precision,
    record_switches,
)


def conv_oracle(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, out_h, out_w))
    for b in range(n):
        for oc in range(o):
            for i in range(out_h):
                for j in range(out_w):
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                out[b, oc, i, j] += xp[b, ic, i * stride + di, j * stride + dj] * w[oc, ic, di, dj]
    return out


def maxpool_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[b, ch, i, j] = x[b, ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def deconv_oracle(x, w):
    n, c, h, wd = x.shape
    o = w.shape[1]
    out = np.zeros((n, o, 2 * h, 2 * wd))
    for b in range(n):
        for ic in range(c):
            for i in range(h):
                for j in range(wd):
                    out[b, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] += x[b, ic, i, j] * w[ic]
    return out


class TestTensor:
    def test_leaf_has_no_producer(self):
        t = Tensor(np.zeros((2, 3)), requires_grad=True)
        assert t.is_leaf
        assert t.shape == (2, 3)
        assert t.size == 6

    def test_default_dtype_follows_precision(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32
        with precision("float64"):
            assert Tensor([1.0, 2.0]).dtype == np.float64

    def test_unknown_precision_rejected(self):
        with pytest.raises(UsageError):
            with precision("float16"):
                pass

    def test_mixed_dtypes_rejected(self):
        a = Tensor(np.ones(3), dtype=np.float32)
        b = Tensor(np.ones(3), dtype=np.float64)
        with pytest.raises(UsageError):
            ops.add(a, b)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.scale(x, 2.0)
        assert y.producer is None
        assert not y.requires_grad


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        w = Tensor(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(ops.conv2d(x, w).numpy(), x.numpy())

    def test_padding_geometry(self):
        x = Tensor(np.full((1, 1, 1, 1), 5.0))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = ops.conv2d(x, w, stride=1, zero_pad=1)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 5.0

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
        w = rng.standard_normal((6, 4, 3, 3)).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), stride=1, zero_pad=1)
        assert out.shape == (2, 6, 8, 8)
        np.testing.assert_allclose(out.numpy(), conv_oracle(x, w, 1, 1), atol=1e-4)

    def test_random_cases_match_loop_oracle(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            k = int(rng.choice([1, 2, 3]))
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, (k - 1) // 2 + 1))
            out_h, out_w = rng.integers(1, 5, size=2)
            h, w = (out_h - 1) * stride + k - 2 * pad, (out_w - 1) * stride + k - 2 * pad
            n, c, o = rng.integers(1, 4, size=3)
            x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
            weight = rng.uniform(-1, 1, (o, c, k, k)).astype(np.float32)
            out = ops.conv2d(Tensor(x), Tensor(weight), stride=stride, zero_pad=pad).numpy()
            expected = conv_oracle(x.astype(np.float64), weight.astype(np.float64), stride, pad)
            assert out.dtype == np.float32
            np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-5)

    def test_bias(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 1, 1)))
        bias = Tensor(np.array([1.0, -2.0, 0.5]))
        with_bias = ops.conv2d(x, w, bias).numpy()
        without = ops.conv2d(x, w).numpy()
        np.testing.assert_allclose(with_bias - without, np.array([1.0, -2.0, 0.5]).reshape(1, 3, 1, 1) * np.ones((1, 3, 4, 4)), atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_extent_must_tile(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=2)


class TestMaxPool:
    def test_single_window(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert ops.maxpool2d(x).item() == 4.0

    def test_tie_sends_gradient_to_top_left(self):
        x = Tensor(np.full((1, 1, 4, 4), 2.0), requires_grad=True)
        out = ops.maxpool2d(x)
        np.testing.assert_array_equal(out.numpy(), np.full((1, 1, 2, 2), 2.0))
        backward(ops.sum(out))
        expected = np.zeros((4, 4))
        expected[::2, ::2] = 1.0
        np.testing.assert_array_equal(x.grad[0, 0], expected)

    def test_random_cases_match_window_scan(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n, c = rng.integers(1, 4, size=2)
            h, w = 2 * rng.integers(1, 6, size=2)
            x = rng.standard_normal((n, c, h, w)).astype(np.float32)
            out = ops.maxpool2d(Tensor(x)).numpy()
            assert out.shape == (n, c, h // 2, w // 2)
            np.testing.assert_allclose(out, maxpool_oracle(x), atol=1e-5)

    def test_odd_extent_rejected(self):
        with pytest.raises(DimensionError):
            ops.maxpool2d(Tensor(np.zeros((1, 1, 5, 4))))


class TestDeconv2d:
    def test_single_tap_scatter(self):
        out = ops.deconv2d(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(out.numpy(), np.full((1, 1, 2, 2), 3.0))

    def test_shape(self):
        out = ops.deconv2d(Tensor(np.zeros((1, 8, 16, 16))), Tensor(np.zeros((8, 4, 2, 2))))
        assert out.shape == (1, 4, 32, 32)

    def test_random_cases_match_scatter_oracle(self):
        rng = np.random.default_rng(102)
        for _ in range(100):
            n, c, o = rng.integers(1, 4, size=3)
            h, w = rng.integers(1, 6, size=2)
            x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
            weight = rng.uniform(-1, 1, (c, o, 2, 2)).astype(np.float32)
            out = ops.deconv2d(Tensor(x), Tensor(weight)).numpy()
            expected = deconv_oracle(x.astype(np.float64), weight.astype(np.float64))
            np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-5)

    def test_only_stride_two(self):
        with pytest.raises(DimensionError):
            ops.deconv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))), stride=1)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(3))).numpy(), np.full(3, 1 / 3), rtol=1e-6)

    def test_closed_form(self):
        out = ops.softmax(Tensor(np.array([0.0, math.log(2.0)]), dtype=np.float64)).numpy()
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], rtol=1e-12)

    def test_large_logits_stay_finite(self):
        out = ops.softmax(Tensor(np.array([1000.0, 1000.0, 999.0]))).numpy()
        assert np.all(np.isfinite(out))
        assert abs(out.sum() - 1.0) < 1e-6

    def test_rows_are_distributions(self, rng):
        out = ops.softmax(Tensor(rng.standard_normal((5, 7)) * 10), axis=-1).numpy()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all((out > 0) & (out <= 1))

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            ops.softmax(Tensor(np.array([0.0, np.nan])))


class TestCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        loss = ops.cross_entropy_loss(Tensor(np.zeros((2, 4, 3, 3)), dtype=np.float64), np.zeros((2, 3, 3), dtype=int))
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_large_margin_goes_to_zero(self):
        target = np.array([[[0, 1], [2, 1]]])
        losses = []
        for margin in (1.0, 10.0, 50.0):
            logits = np.zeros((1, 3, 2, 2))
            np.put_along_axis(logits, target[:, None], margin, axis=1)
            losses.append(ops.cross_entropy_loss(Tensor(logits, dtype=np.float64), target).item())
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-20

    def test_matches_per_pixel_oracle(self, rng):
        logits = rng.standard_normal((1, 3, 2, 2))
        target = rng.integers(0, 3, size=(1, 2, 2))
        total = 0.0
        for i in range(2):
            for j in range(2):
                z = logits[0, :, i, j]
                total += -(z[target[0, i, j]] - math.log(np.exp(z).sum()))
        loss = ops.cross_entropy_loss(Tensor(logits, dtype=np.float64), LabelMap(target, num_classes=3))
        assert loss.item() == pytest.approx(total / 4, abs=1e-6)

    def test_out_of_range_class(self):
        with pytest.raises(LabelError):
            ops.cross_entropy_loss(Tensor(np.zeros((1, 2, 2, 2))), np.full((1, 2, 2), 2))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gives_two_x(self, rng):
        data = rng.standard_normal((3, 4))
        x = Tensor(data, requires_grad=True, dtype=np.float64)
        backward(ops.sum(ops.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * data, rtol=1e-12)

    def test_shared_input_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
        y = ops.add(ops.scale(x, 3.0), x)
        backward(ops.sum(y))
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            backward(ops.scale(x, 2.0))

    def test_take_scatter_adds(self):
        table = Tensor(np.zeros((3, 2)), requires_grad=True, dtype=np.float64)
        backward(ops.sum(ops.take(table, np.array([0, 2, 2]))))
        np.testing.assert_array_equal(table.grad, [[1, 1], [0, 0], [2, 2]])

    def test_forward_is_deterministic(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        first = ops.relu(ops.conv2d(x, w, zero_pad=1)).numpy()
        second = ops.relu(ops.conv2d(x, w, zero_pad=1)).numpy()
        assert first.tobytes() == second.tobytes()


class TestInstrumentation:
    def test_matmul_counts_macs_by_stage(self):
        from src.tensor.core import mac_stage

        a = Tensor(np.ones((2, 3, 4)))
        b = Tensor(np.ones((2, 4, 5)))
        with count_macs() as counter:
            with mac_stage("score"):
                ops.matmul(a, b)
            ops.matmul(a, b)
        assert counter.total("score") == 2 * 3 * 4 * 5
        assert counter.total() == 2 * 2 * 3 * 4 * 5

    def test_switch_patterns_recorded(self):
        with record_switches() as patterns:
            ops.relu(Tensor(np.array([-1.0, 2.0])))
            ops.maxpool2d(Tensor(np.zeros((1, 1, 2, 2))))
        assert len(patterns) == 2

    def test_registry_covers_every_kind(self):
        kinds = set(get_all_primitives())
        assert {"conv2d", "maxpool2d", "deconv2d", "softmax", "cross_entropy", "relu", "matmul"} <= kinds
        assert get_primitive("relu").kind == "relu"
        with pytest.raises(UsageError):
            get_primitive("tanh")
