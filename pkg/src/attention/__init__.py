"""Axial self-attention, the dense reference and complexity accounting."""

from src.attention.axial import (
    AttentionBlock,
    AttentionBlockSpec,
    AttentionLayerParams,
    AxialLayer,
    attention_block,
    axial_attend,
    axial_attention_weights,
    init_attention_block,
    init_attention_params,
    qkv_project,
    relative_index,
)
from src.attention.complexity import (
    BenchRow,
    count_attention_flops,
    count_positional_macs,
    count_projection_macs,
    fit_loglog_slope,
    run_attention_bench,
    summarize_slopes,
)
from src.attention.reference import full_attention_reference

__all__ = [
    "AttentionBlock",
    "AttentionBlockSpec",
    "AttentionLayerParams",
    "AxialLayer",
    "attention_block",
    "axial_attend",
    "axial_attention_weights",
    "init_attention_block",
    "init_attention_params",
    "qkv_project",
    "relative_index",
    "BenchRow",
    "count_attention_flops",
    "count_positional_macs",
    "count_projection_macs",
    "fit_loglog_slope",
    "run_attention_bench",
    "summarize_slopes",
    "full_attention_reference",
]
