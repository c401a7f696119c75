"""Forward/backward kernels for every primitive plus their functional wrappers."""

from typing import Any, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DimensionError, LabelError, NumericError
from src.tensor.core import Primitive, Tensor, apply, note_switch, record_macs, register_primitive


def _require_same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _require_finite(kind: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{kind}: input contains non-finite values")


@register_primitive
class Add(Primitive):
    kind = "add"

    def forward(self, a, b):
        _require_same_shape(self.kind, a, b)
        return a + b, {}

    def backward(self, grad, saved, needs):
        return grad, grad


@register_primitive
class Mul(Primitive):
    kind = "mul"

    def forward(self, a, b):
        _require_same_shape(self.kind, a, b)
        return a * b, {"a": a, "b": b}

    def backward(self, grad, saved, needs):
        return (
            grad * saved["b"] if needs[0] else None,
            grad * saved["a"] if needs[1] else None,
        )


@register_primitive
class Scale(Primitive):
    kind = "scale"

    def forward(self, x, factor: float):
        factor = x.dtype.type(factor)
        return x * factor, {"factor": factor}

    def backward(self, grad, saved, needs):
        return (grad * saved["factor"],)


@register_primitive
class BiasAdd(Primitive):
    """Per-channel bias on axis 1, the one broadcast the engine permits."""

    kind = "bias_add"

    def forward(self, x, bias):
        if x.ndim < 2 or bias.shape != (x.shape[1],):
            raise DimensionError(f"bias_add: bias {bias.shape} does not match channels of {x.shape}")
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return x + bias.reshape(shape), {"axes": (0,) + tuple(range(2, x.ndim))}

    def backward(self, grad, saved, needs):
        return grad, grad.sum(axis=saved["axes"]) if needs[1] else None


@register_primitive
class Matmul(Primitive):
    """Matrix product over the last two axes; leading axes must match exactly."""

    kind = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        batch = int(np.prod(a.shape[:-2], dtype=np.int64))
        record_macs(batch * a.shape[-2] * a.shape[-1] * b.shape[-1])
        return np.matmul(a, b), {"a": a, "b": b}

    def backward(self, grad, saved, needs):
        a, b = saved["a"], saved["b"]
        return (
            np.matmul(grad, np.swapaxes(b, -1, -2)) if needs[0] else None,
            np.matmul(np.swapaxes(a, -1, -2), grad) if needs[1] else None,
        )


@register_primitive
class Relu(Primitive):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        note_switch(mask)
        return np.where(mask, x, x.dtype.type(0)), {"mask": mask}

    def backward(self, grad, saved, needs):
        return (np.where(saved["mask"], grad, grad.dtype.type(0)),)


@register_primitive
class Concat(Primitive):
    kind = "concat"

    def forward(self, *arrays, axis: int):
        if not arrays:
            raise DimensionError("concat: no inputs")
        ndim = arrays[0].ndim
        axis = axis % ndim
        for array in arrays[1:]:
            if array.ndim != ndim or any(
                array.shape[d] != arrays[0].shape[d] for d in range(ndim) if d != axis
            ):
                raise DimensionError(
                    f"concat: shapes {[a.shape for a in arrays]} disagree off axis {axis}"
                )
        sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis), {"axis": axis, "sizes": sizes}

    def backward(self, grad, saved, needs):
        cuts = np.cumsum(saved["sizes"])[:-1]
        return tuple(np.split(grad, cuts, axis=saved["axis"]))


@register_primitive
class Permute(Primitive):
    kind = "permute"

    def forward(self, x, axes: Tuple[int, ...]):
        axes = tuple(int(a) for a in axes)
        if sorted(axes) != list(range(x.ndim)):
            raise DimensionError(f"permute: {axes} is not a permutation of {x.ndim} axes")
        return np.ascontiguousarray(np.transpose(x, axes)), {"inverse": tuple(np.argsort(axes))}

    def backward(self, grad, saved, needs):
        return (np.transpose(grad, saved["inverse"]),)


@register_primitive
class Reshape(Primitive):
    kind = "reshape"

    def forward(self, x, shape: Tuple[int, ...]):
        shape = tuple(int(s) for s in shape)
        if -1 not in shape and int(np.prod(shape, dtype=np.int64)) != x.size:
            raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
        try:
            out = x.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"reshape: {exc}") from None
        return out, {"shape": x.shape}

    def backward(self, grad, saved, needs):
        return (grad.reshape(saved["shape"]),)


@register_primitive
class Sum(Primitive):
    kind = "sum"

    def forward(self, x):
        return np.asarray(x.sum(), dtype=x.dtype), {"shape": x.shape}

    def backward(self, grad, saved, needs):
        return (np.full(saved["shape"], grad, dtype=grad.dtype),)


@register_primitive
class Mean(Primitive):
    kind = "mean"

    def forward(self, x):
        return np.asarray(x.mean(), dtype=x.dtype), {"shape": x.shape, "count": x.size}

    def backward(self, grad, saved, needs):
        return (np.full(saved["shape"], grad / saved["count"], dtype=grad.dtype),)


@register_primitive
class Take(Primitive):
    """Row gather ``table[indices]``; backward scatter-adds into the table."""

    kind = "take"

    def forward(self, table, indices: np.ndarray):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
            raise DimensionError(f"take: indices outside [0, {table.shape[0]})")
        return table[indices], {"indices": indices, "shape": table.shape}

    def backward(self, grad, saved, needs):
        out = np.zeros(saved["shape"], dtype=grad.dtype)
        np.add.at(out, saved["indices"], grad)
        return (out,)


@register_primitive
class Softmax(Primitive):
    kind = "softmax"

    def forward(self, x, axis: int):
        _require_finite(self.kind, x)
        shifted = x - x.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        y = exp / exp.sum(axis=axis, keepdims=True)
        return y, {"y": y, "axis": axis}

    def backward(self, grad, saved, needs):
        y, axis = saved["y"], saved["axis"]
        return (y * (grad - (grad * y).sum(axis=axis, keepdims=True)),)


@register_primitive
class CrossEntropy(Primitive):
    """Mean pixel-wise cross-entropy of logits [N,K,H,W] against ids [N,H,W]."""

    kind = "cross_entropy"

    def forward(self, logits, target: np.ndarray):
        if logits.ndim != 4:
            raise DimensionError(f"cross_entropy: logits must be [N,K,H,W], got {logits.shape}")
        n, k, h, w = logits.shape
        target = np.asarray(target)
        if target.shape != (n, h, w):
            raise DimensionError(f"cross_entropy: target {target.shape} does not match logits {logits.shape}")
        if target.size and (target.min() < 0 or target.max() >= k):
            raise LabelError(f"cross_entropy: class ids must lie in [0, {k})")
        _require_finite(self.kind, logits)
        target = target.astype(np.int64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        picked = np.take_along_axis(log_probs, target[:, None], axis=1)
        loss = np.asarray(-picked.mean(), dtype=logits.dtype)
        return loss, {"probs": np.exp(log_probs), "target": target}

    def backward(self, grad, saved, needs):
        probs, target = saved["probs"], saved["target"]
        out = probs.copy()
        np.put_along_axis(out, target[:, None], np.take_along_axis(out, target[:, None], axis=1) - 1, axis=1)
        count = target.size
        return (out * (grad / count),)


@register_primitive
class Conv2d(Primitive):
    """Cross-correlation of [N,C,H,W] with [O,C,k,k] via strided windows."""

    kind = "conv2d"

    def forward(self, x, weight, stride: int = 1, zero_pad: int = 0):
        if x.ndim != 4 or weight.ndim != 4:
            raise DimensionError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
        n, c, h, w = x.shape
        out_ch, in_ch, kh, kw = weight.shape
        if in_ch != c:
            raise DimensionError(f"conv2d: input has {c} channels, weight expects {in_ch}")
        if kh != kw or kh < 1 or stride < 1 or zero_pad < 0:
            raise DimensionError(f"conv2d: unsupported kernel {kh}x{kw}, stride {stride}, pad {zero_pad}")
        k = kh
        span_h, span_w = h + 2 * zero_pad - k, w + 2 * zero_pad - k
        if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
            raise DimensionError(f"conv2d: extents {h}x{w} do not tile with k={k}, stride={stride}, pad={zero_pad}")
        out_h, out_w = span_h // stride + 1, span_w // stride + 1
        padded = np.pad(x, ((0, 0), (0, 0), (zero_pad, zero_pad), (zero_pad, zero_pad))) if zero_pad else x
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        saved = {
            "windows": windows,
            "weight": weight,
            "padded_shape": padded.shape,
            "stride": stride,
            "zero_pad": zero_pad,
            "out_hw": (out_h, out_w),
        }
        return np.ascontiguousarray(out), saved

    def backward(self, grad, saved, needs):
        weight, stride, pad = saved["weight"], saved["stride"], saved["zero_pad"]
        out_h, out_w = saved["out_hw"]
        k = weight.shape[2]
        grad_x = grad_w = None
        if needs[0]:
            grad_padded = np.zeros(saved["padded_shape"], dtype=grad.dtype)
            for i in range(k):
                for j in range(k):
                    tap = np.tensordot(grad, weight[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    grad_padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += tap
            h_end = grad_padded.shape[2] - pad
            w_end = grad_padded.shape[3] - pad
            grad_x = grad_padded[:, :, pad:h_end, pad:w_end]
        if needs[1]:
            grad_w = np.tensordot(grad, saved["windows"], axes=([0, 2, 3], [0, 2, 3]))
        return grad_x, grad_w


@register_primitive
class MaxPool2d(Primitive):
    """2x2 stride-2 max pooling; ties go to the first window element in row-major order."""

    kind = "maxpool2d"

    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"maxpool2d: expected [N,C,H,W], got {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"maxpool2d: extents {h}x{w} must be even")
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        winner = windows.argmax(axis=-1)
        note_switch(winner.astype(np.uint8))
        out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
        return out, {"winner": winner, "shape": x.shape}

    def backward(self, grad, saved, needs):
        n, c, h, w = saved["shape"]
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(routed, saved["winner"][..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(n, c, h, w),)


@register_primitive
class Deconv2d(Primitive):
    """Transposed convolution with a 2x2 kernel and stride 2 (doubles H and W)."""

    kind = "deconv2d"

    def forward(self, x, weight, stride: int = 2):
        if x.ndim != 4 or weight.ndim != 4:
            raise DimensionError(f"deconv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
        if stride != 2 or weight.shape[2:] != (2, 2):
            raise DimensionError(f"deconv2d: only kernel 2x2 with stride 2 is supported, got {weight.shape[2:]} / {stride}")
        n, c, h, w = x.shape
        if weight.shape[0] != c:
            raise DimensionError(f"deconv2d: input has {c} channels, weight expects {weight.shape[0]}")
        out_ch = weight.shape[1]
        scattered = np.tensordot(x, weight, axes=([1], [0]))  # N,H,W,O,2,2
        out = scattered.transpose(0, 3, 1, 4, 2, 5).reshape(n, out_ch, 2 * h, 2 * w)
        return np.ascontiguousarray(out), {"x": x, "weight": weight}

    def backward(self, grad, saved, needs):
        x, weight = saved["x"], saved["weight"]
        n, c, h, w = x.shape
        blocks = grad.reshape(n, weight.shape[1], h, 2, w, 2)
        grad_x = grad_w = None
        if needs[0]:
            grad_x = np.tensordot(blocks, weight, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if needs[1]:
            grad_w = np.tensordot(x, blocks, axes=([0, 2, 3], [0, 2, 4]))
        return grad_x, grad_w


@register_primitive
class BatchNorm(Primitive):
    """Per-channel normalization over (N, H, W) using batch statistics."""

    kind = "batch_norm"

    def forward(self, x, gamma, beta, eps: float = 1e-5):
        if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionError(f"batch_norm: parameters {gamma.shape}/{beta.shape} do not match {x.shape}")
        axes = (0, 2, 3)
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        x_hat = (x - mean) * inv_std
        out = x_hat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
        return out, {"x_hat": x_hat, "inv_std": inv_std, "gamma": gamma}

    def backward(self, grad, saved, needs):
        x_hat, inv_std, gamma = saved["x_hat"], saved["inv_std"], saved["gamma"]
        axes = (0, 2, 3)
        count = grad.size // grad.shape[1]
        grad_beta = grad.sum(axis=axes)
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_x = None
        if needs[0]:
            g_hat = grad * gamma.reshape(1, -1, 1, 1)
            grad_x = (inv_std / count) * (
                count * g_hat
                - g_hat.sum(axis=axes, keepdims=True)
                - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        return grad_x, grad_gamma, grad_beta


# Functional API


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply("add", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply("mul", a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return apply("scale", x, factor=factor)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    return apply("bias_add", x, bias)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply("matmul", a, b)


def relu(x: Tensor) -> Tensor:
    return apply("relu", x)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return apply("permute", x, axes=tuple(axes))


def transpose(x: Tensor, axis0: int = -2, axis1: int = -1) -> Tensor:
    axes = list(range(x.ndim))
    axes[axis0], axes[axis1] = axes[axis1], axes[axis0]
    return permute(x, axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return apply("reshape", x, shape=tuple(shape))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return apply("sum", x)


def mean(x: Tensor) -> Tensor:
    return apply("mean", x)


def take(table: Tensor, indices: np.ndarray) -> Tensor:
    return apply("take", table, indices=indices)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return apply("softmax", x, axis=axis)


def cross_entropy_loss(logits: Tensor, target: Any) -> Tensor:
    """Mean cross-entropy; ``target`` is a LabelMap or an integer array [N,H,W]."""
    classes = getattr(target, "classes", target)
    return apply("cross_entropy", logits, target=np.asarray(classes))


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, zero_pad: int = 0
) -> Tensor:
    out = apply("conv2d", x, weight, stride=stride, zero_pad=zero_pad)
    return bias_add(out, bias) if bias is not None else out


def maxpool2d(x: Tensor) -> Tensor:
    return apply("maxpool2d", x)


def deconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    out = apply("deconv2d", x, weight, stride=stride)
    return bias_add(out, bias) if bias is not None else out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return apply("batch_norm", x, gamma, beta, eps=eps)


__all__: Tuple[str, ...] = (
    "add",
    "mul",
    "scale",
    "bias_add",
    "matmul",
    "relu",
    "concat",
    "permute",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "take",
    "softmax",
    "cross_entropy_loss",
    "conv2d",
    "maxpool2d",
    "deconv2d",
    "batch_norm",
)
