import numpy as np
import pytest

from src.errors import UsageError
from src.network.waunet import layer_grad_checks
from src.tensor import ops
from src.tensor.core import Tensor, get_all_primitives, get_primitive
from src.tensor.gradcheck import check_primitives, grad_check, relative_error


def test_quadratic_is_exact(rng):
    x = Tensor(rng.standard_normal(10), requires_grad=True, dtype=np.float64)
    result = grad_check(lambda: ops.sum(ops.mul(x, x)), {"x": x}, eps=1e-5)
    assert result.max_relative_error < 1e-9
    assert result.n_sampled == 10


def test_requires_float64():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float32)
    with pytest.raises(UsageError):
        grad_check(lambda: ops.sum(x), {"x": x})


def test_sampling_limits_coordinates(rng):
    a = Tensor(rng.standard_normal((4, 4)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(5), requires_grad=True, dtype=np.float64)
    result = grad_check(
        lambda: ops.add(ops.sum(ops.mul(a, a)), ops.sum(b)), {"a": a, "b": b}, n_samples=7, seed=3
    )
    assert result.n_sampled == 7
    assert result.n_requested == 7


def test_kink_is_skipped_not_failed():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True, dtype=np.float64)
    result = grad_check(lambda: ops.sum(ops.relu(x)), {"x": x}, eps=1e-4)
    assert result.n_skipped == 1
    assert result.n_sampled == 2
    assert result.max_relative_error < 1e-9


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_every_primitive_passes():
    results = check_primitives(eps=1e-4)
    assert set(results) == set(get_all_primitives())
    for kind, result in results.items():
        assert result.passed(1e-5), f"{kind}: {result.max_relative_error:.3e}"


def test_sign_bug_in_backward_is_detected(mocker):
    relu = get_primitive("relu")
    original = relu.backward

    def flipped(grad, saved, needs):
        return tuple(None if g is None else -g for g in original(grad, saved, needs))

    mocker.patch.object(relu, "backward", side_effect=flipped)
    results = check_primitives(eps=1e-4)
    assert not results["relu"].passed(1e-5)
    assert results["relu"].offenders(1e-5) == ["x"]
    assert results["conv2d"].passed(1e-5)


def test_layer_types_pass():
    results = layer_grad_checks(seed=0, eps=1e-4)
    assert set(results) == {"conv_block", "fuse", "upsample", "attention_layer", "attention_block"}
    assert results["attention_layer"].passed(1e-5)
    assert results["attention_block"].passed(1e-5)
    for name, result in results.items():
        assert result.passed(1e-4), f"{name}: {result.max_relative_error:.3e}"


def test_result_serializes():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    payload = grad_check(lambda: ops.sum(ops.mul(x, x)), {"x": x}).to_dict()
    assert payload["worst_parameter"] == "x"
    assert payload["per_parameter"]["x"]["n_sampled"] == 2


def test_kinks_are_replaced_by_further_draws():
    x = Tensor(np.array([0.0, 0.0, 0.0, 1.0, 2.0, -1.0, -2.0, 3.0]), requires_grad=True, dtype=np.float64)
    result = grad_check(lambda: ops.sum(ops.relu(x)), {"x": x}, eps=1e-4, n_samples=4, seed=1)
    assert result.n_sampled == 4
    assert result.n_skipped <= 3
    assert not result.short
    assert result.passed(1e-6)


def test_too_few_checkable_coordinates_fails():
    x = Tensor(np.array([0.0, 0.0, 0.0, 1.0]), requires_grad=True, dtype=np.float64)
    result = grad_check(lambda: ops.sum(ops.relu(x)), {"x": x}, eps=1e-4, n_samples=3, seed=1)
    assert result.n_sampled == 1
    assert result.n_skipped == 3
    assert result.short
    assert not result.passed(1e-6)
