"""Multi-head axial self-attention with relative positional encodings.

A layer attends along one image axis at a time. For query position ``j``
and key position ``w`` on that axis the logit per head is

    q_j . k_w / sqrt(d_k) + q_j . rq[w - j] + k_w . rk[w - j]

and the output is sum_w a[j, w] * (v_w + rv[w - j]), followed by the
output projection. The softmax runs over ``w`` across all three terms.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Tuple

import numpy as np

from src.errors import ConfigurationError, DimensionError, UsageError
from src.tensor import ops
from src.tensor.core import Tensor, mac_stage, no_grad

Axis = Literal["height", "width"]

# (N, C, H, W) -> (N, other, L, C) and back, per attended axis
_TO_SEQUENCE = {"height": (0, 3, 2, 1), "width": (0, 2, 3, 1)}
_FROM_SEQUENCE = {"height": (0, 3, 2, 1), "width": (0, 3, 1, 2)}


@dataclass
class AttentionLayerParams:
    """Projection weights and relative positional tables for one axis pass.

    ``w_q``, ``w_k``, ``w_v`` and ``w_out`` are (d_model, d_model); head ``h``
    owns columns ``h*d_k:(h+1)*d_k`` of the input projections. The tables
    ``r_q``, ``r_k``, ``r_v`` are (2*axis_len - 1, heads, d_k), indexed by
    offset ``w - j + axis_len - 1``.
    """

    heads: int
    d_model: int
    axis_len: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor
    r_q: Tensor
    r_k: Tensor
    r_v: Tensor

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigurationError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        for name in ("w_q", "w_k", "w_v", "w_out"):
            if getattr(self, name).shape != (self.d_model, self.d_model):
                raise DimensionError(f"{name} must be ({self.d_model}, {self.d_model})")
        table_shape = (2 * self.axis_len - 1, self.heads, self.d_k)
        for name in ("r_q", "r_k", "r_v"):
            if getattr(self, name).shape != table_shape:
                raise DimensionError(f"{name} must be {table_shape}, got {getattr(self, name).shape}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        names = ("w_q", "w_k", "w_v", "w_out", "r_q", "r_k", "r_v")
        return {f"{prefix}{name}": getattr(self, name) for name in names}

    def zero_positional(self) -> None:
        for table in (self.r_q, self.r_k, self.r_v):
            table.data[...] = 0


def init_attention_params(
    d_model: int,
    heads: int,
    axis_len: int,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_output: bool = True,
) -> AttentionLayerParams:
    """Projections ~ N(0, 1/d_model), tables ~ U[-1/sqrt(d_k), 1/sqrt(d_k)]."""
    if d_model % heads:
        raise ConfigurationError(f"d_model {d_model} not divisible by heads {heads}")
    d_k = d_model // heads
    std = 1.0 / np.sqrt(d_model)
    bound = 1.0 / np.sqrt(d_k)

    def projection() -> Tensor:
        return Tensor(rng.normal(0.0, std, (d_model, d_model)), requires_grad=True, dtype=dtype)

    def table() -> Tensor:
        return Tensor(rng.uniform(-bound, bound, (2 * axis_len - 1, heads, d_k)), requires_grad=True, dtype=dtype)

    w_q, w_k, w_v = projection(), projection(), projection()
    w_out = Tensor(np.zeros((d_model, d_model)), requires_grad=True, dtype=dtype) if zero_output else projection()
    return AttentionLayerParams(
        heads=heads,
        d_model=d_model,
        axis_len=axis_len,
        w_q=w_q,
        w_k=w_k,
        w_v=w_v,
        w_out=w_out,
        r_q=table(),
        r_k=table(),
        r_v=table(),
    )


@dataclass
class AxialLayer:
    height: AttentionLayerParams
    width: AttentionLayerParams

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = self.height.named_parameters(f"{prefix}height.")
        params.update(self.width.named_parameters(f"{prefix}width."))
        return params


@dataclass
class AttentionBlockSpec:
    depth: int
    heads: int = 8
    axis_order: Tuple[Axis, Axis] = ("height", "width")


@dataclass
class AttentionBlock:
    spec: AttentionBlockSpec
    layers: List[AxialLayer] = field(default_factory=list)

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            params.update(layer.named_parameters(f"{prefix}layer{index}."))
        return params


def init_attention_block(
    spec: AttentionBlockSpec,
    d_model: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_output: bool = True,
) -> AttentionBlock:
    layers = [
        AxialLayer(
            height=init_attention_params(d_model, spec.heads, height, rng, dtype, zero_output),
            width=init_attention_params(d_model, spec.heads, width, rng, dtype, zero_output),
        )
        for _ in range(spec.depth)
    ]
    return AttentionBlock(spec=spec, layers=layers)


def check_channels(x: Tensor, params: AttentionLayerParams) -> None:
    if x.ndim != 4:
        raise DimensionError(f"attention expects [N,C,H,W], got {x.shape}")
    if x.shape[1] != params.d_model:
        raise DimensionError(f"input has {x.shape[1]} channels, attention expects {params.d_model}")


def project_heads(tokens: Tensor, weight: Tensor, heads: int) -> Tensor:
    """(B, L, C) @ (C, C) -> (B, heads, L, d_k)."""
    b, length, channels = tokens.shape
    flat = ops.reshape(tokens, (b * length, channels))
    projected = ops.reshape(ops.matmul(flat, weight), (b, length, heads, channels // heads))
    return ops.permute(projected, (0, 2, 1, 3))


def qkv_project(x: Tensor, params: AttentionLayerParams) -> Tuple[Tensor, Tensor, Tensor]:
    """Per-head queries, keys and values laid out as (N, H, W, heads, d_k)."""
    check_channels(x, params)
    n, c, h, w = x.shape
    tokens = ops.reshape(ops.permute(x, (0, 2, 3, 1)), (1, n * h * w, c))
    with mac_stage("projection"):
        projected = [project_heads(tokens, weight, params.heads) for weight in (params.w_q, params.w_k, params.w_v)]
    return tuple(
        ops.reshape(ops.permute(t, (0, 2, 1, 3)), (n, h, w, params.heads, params.d_k)) for t in projected
    )


def relative_index(length: int, axis_len: int) -> np.ndarray:
    """idx[j, w] = w - j + axis_len - 1 for query j and key w."""
    positions = np.arange(length)
    return positions[None, :] - positions[:, None] + axis_len - 1


def _gather_table(table: Tensor, length: int, axis_len: int) -> Tensor:
    """Relative table -> (heads, L_query, L_key, d_k)."""
    idx = relative_index(length, axis_len).reshape(-1)
    rows = ops.take(table, idx)
    heads, d_k = table.shape[1], table.shape[2]
    return ops.permute(ops.reshape(rows, (length, length, heads, d_k)), (2, 0, 1, 3))


def _attention_terms(x: Tensor, params: AttentionLayerParams, axis: Axis):
    if axis not in _TO_SEQUENCE:
        raise UsageError(f"unknown axis {axis!r}")
    check_channels(x, params)
    seq = ops.permute(x, _TO_SEQUENCE[axis])
    n, other, length, channels = seq.shape
    if length > params.axis_len:
        raise ConfigurationError(
            f"{axis} axis has {length} positions but positional tables cover {params.axis_len}"
        )
    heads, d_k = params.heads, params.d_k
    batch = n * other
    tokens = ops.reshape(seq, (batch, length, channels))

    with mac_stage("projection"):
        q = project_heads(tokens, params.w_q, heads)
        k = project_heads(tokens, params.w_k, heads)
        v = project_heads(tokens, params.w_v, heads)

    q_flat = ops.reshape(q, (batch * heads, length, d_k))
    k_flat = ops.reshape(k, (batch * heads, length, d_k))
    with mac_stage("score"):
        content = ops.matmul(q_flat, ops.transpose(k_flat))
    content = ops.reshape(ops.scale(content, 1.0 / np.sqrt(d_k)), (batch, heads, length, length))

    rq = _gather_table(params.r_q, length, params.axis_len)
    rk = _gather_table(params.r_k, length, params.axis_len)
    with mac_stage("positional"):
        # q_j . rq[j, w], batched over (head, j)
        q_by_query = ops.permute(q, (1, 2, 0, 3))
        query_term = ops.matmul(q_by_query, ops.permute(rq, (0, 1, 3, 2)))
        query_term = ops.permute(query_term, (2, 0, 1, 3))
        # k_w . rk[j, w], batched over (head, w)
        k_by_key = ops.permute(k, (1, 2, 0, 3))
        key_term = ops.matmul(k_by_key, ops.permute(rk, (0, 2, 3, 1)))
        key_term = ops.permute(key_term, (2, 0, 3, 1))
    logits = ops.add(ops.add(content, query_term), key_term)
    return seq.shape, logits, v


def axial_attention_weights(x: Tensor, params: AttentionLayerParams, axis: Axis) -> np.ndarray:
    """Post-softmax weights (N*other, heads, L_query, L_key) without recording a graph."""
    with no_grad():
        _, logits, _ = _attention_terms(x, params, axis)
        return ops.softmax(logits, axis=-1).numpy()


def axial_attend(x: Tensor, params: AttentionLayerParams, axis: Axis) -> Tensor:
    """Attend along ``axis`` ("height" or "width"); output has the shape of ``x``."""
    (n, other, length, channels), logits, v = _attention_terms(x, params, axis)
    heads, d_k = params.heads, params.d_k
    batch = n * other
    weights = ops.softmax(logits, axis=-1)

    with mac_stage("aggregate"):
        content = ops.matmul(
            ops.reshape(weights, (batch * heads, length, length)),
            ops.reshape(v, (batch * heads, length, d_k)),
        )
    content = ops.reshape(content, (batch, heads, length, d_k))

    rv = _gather_table(params.r_v, length, params.axis_len)
    with mac_stage("positional"):
        # sum_w a[j, w] rv[j, w], batched over (head, j)
        positional = ops.matmul(ops.permute(weights, (1, 2, 0, 3)), rv)
    positional = ops.permute(positional, (2, 0, 1, 3))

    heads_out = ops.permute(ops.add(content, positional), (0, 2, 1, 3))
    merged = ops.reshape(heads_out, (batch * length, channels))
    with mac_stage("projection"):
        projected = ops.matmul(merged, params.w_out)
    seq = ops.reshape(projected, (n, other, length, channels))
    return ops.permute(seq, _FROM_SEQUENCE[axis])


def attention_block(x: Tensor, block: AttentionBlock) -> Tensor:
    """Stack of axial layers, each a residual height pass then a residual width pass."""
    if block.spec.depth < 1 or len(block.layers) != block.spec.depth:
        raise UsageError(f"attention block needs depth >= 1 with one layer each, got {block.spec.depth}")
    for layer in block.layers:
        for axis in block.spec.axis_order:
            x = ops.add(x, axial_attend(x, getattr(layer, axis), axis))
    return x
