"""Parameter initialization and the closed-form parameter count."""

from typing import Dict

import numpy as np

from src.config.run_config import NetConfig
from src.tensor.core import Tensor

ParamStore = Dict[str, Tensor]


def kaiming_conv(
    store: ParamStore,
    name: str,
    in_channels: int,
    out_channels: int,
    kernel: int,
    rng: np.random.Generator,
    dtype,
) -> None:
    """Fan-in scaled normal weights, zero bias."""
    std = np.sqrt(2.0 / (in_channels * kernel * kernel))
    weight = rng.normal(0.0, std, (out_channels, in_channels, kernel, kernel))
    store[f"{name}.weight"] = Tensor(weight, requires_grad=True, dtype=dtype, name=f"{name}.weight")
    store[f"{name}.bias"] = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype, name=f"{name}.bias")


def kaiming_deconv(
    store: ParamStore,
    name: str,
    in_channels: int,
    out_channels: int,
    rng: np.random.Generator,
    dtype,
) -> None:
    std = np.sqrt(2.0 / in_channels)
    weight = rng.normal(0.0, std, (in_channels, out_channels, 2, 2))
    store[f"{name}.weight"] = Tensor(weight, requires_grad=True, dtype=dtype, name=f"{name}.weight")
    store[f"{name}.bias"] = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype, name=f"{name}.bias")


def batch_norm_params(store: ParamStore, name: str, channels: int, dtype) -> None:
    store[f"{name}.gamma"] = Tensor(np.ones(channels), requires_grad=True, dtype=dtype, name=f"{name}.gamma")
    store[f"{name}.beta"] = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype, name=f"{name}.beta")


def zero_conv(store: ParamStore, name: str, in_channels: int, out_channels: int, kernel: int, dtype) -> None:
    store[f"{name}.weight"] = Tensor(
        np.zeros((out_channels, in_channels, kernel, kernel)), requires_grad=True, dtype=dtype, name=f"{name}.weight"
    )
    store[f"{name}.bias"] = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype, name=f"{name}.bias")


def _conv(in_channels: int, out_channels: int, kernel: int) -> int:
    return kernel * kernel * in_channels * out_channels + out_channels


def _block(in_channels: int, out_channels: int, batch_norm: bool) -> int:
    count = _conv(in_channels, out_channels, 3) + 2 * _conv(out_channels, out_channels, 3)
    return count + (6 * out_channels if batch_norm else 0)


def analytic_parameter_count(config: NetConfig) -> int:
    """Closed-form size of the network built by ``build_waunet(config)``."""
    levels, filters = config.levels, config.filters
    total = 0
    for i in range(levels):
        f = filters[i]
        in_channels = config.in_channels if i == 0 else filters[i - 1]
        total += _block(in_channels, f, config.batch_norm)
        # nested nodes X^{i,j}, 1 <= j <= levels - 1 - i
        for j in range(1, levels - i):
            total += _conv((j + 1) * f, f, 1) + _block(f, f, config.batch_norm)
        if i < levels - 1:
            total += 4 * filters[i + 1] * f + f
            total += _conv((levels - i + 1) * f, f, 1) + _block(f, f, config.batch_norm)
        if config.use_attention and config.attention_depths[i]:
            axis = config.level_size(i)
            per_axis = 4 * f * f + 3 * (2 * axis - 1) * f
            total += config.attention_depths[i] * 2 * per_axis
    total += _conv(filters[0], config.num_classes, 1)
    return total
