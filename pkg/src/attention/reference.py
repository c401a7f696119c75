"""Dense self-attention over all H*W tokens.

Quadratic in the number of tokens; used as an oracle for the axial kernels
and as the baseline of the complexity benchmark. Positional tables are
ignored.
"""

import numpy as np

from src.attention.axial import AttentionLayerParams, check_channels, project_heads
from src.tensor import ops
from src.tensor.core import Tensor, mac_stage


def full_attention_reference(x: Tensor, params: AttentionLayerParams) -> Tensor:
    check_channels(x, params)
    n, c, h, w = x.shape
    tokens = ops.reshape(ops.permute(x, (0, 2, 3, 1)), (n, h * w, c))
    heads, d_k = params.heads, params.d_k
    count = h * w

    with mac_stage("projection"):
        q = project_heads(tokens, params.w_q, heads)
        k = project_heads(tokens, params.w_k, heads)
        v = project_heads(tokens, params.w_v, heads)

    q = ops.reshape(q, (n * heads, count, d_k))
    k = ops.reshape(k, (n * heads, count, d_k))
    v = ops.reshape(v, (n * heads, count, d_k))
    with mac_stage("score"):
        scores = ops.matmul(q, ops.transpose(k))
    weights = ops.softmax(ops.scale(scores, 1.0 / np.sqrt(d_k)), axis=-1)
    with mac_stage("aggregate"):
        mixed = ops.matmul(weights, v)

    mixed = ops.permute(ops.reshape(mixed, (n, heads, count, d_k)), (0, 2, 1, 3))
    with mac_stage("projection"):
        projected = ops.matmul(ops.reshape(mixed, (n * count, c)), params.w_out)
    return ops.permute(ops.reshape(projected, (n, h, w, c)), (0, 3, 1, 2))
