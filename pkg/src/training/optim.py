"""Adam with bias correction and the polynomial learning-rate schedule."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from src.config.run_config import TrainConfig
from src.errors import TrainingError, UsageError
from src.network.checkpoint import OptimizerSnapshot
from src.tensor.core import Tensor


def poly_lr(step: int, config: TrainConfig) -> float:
    """lr0 * (1 - step / total_steps) ** poly_power."""
    if not 0 <= step <= config.total_steps:
        raise UsageError(f"step {step} outside [0, {config.total_steps}]")
    return config.lr0 * (1.0 - step / config.total_steps) ** config.poly_power


@dataclass
class OptimizerState:
    """First and second moment per parameter plus the number of steps taken."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )

    def snapshot(self) -> OptimizerSnapshot:
        return OptimizerSnapshot(
            t=self.t,
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
        )

    @classmethod
    def from_snapshot(cls, snapshot: OptimizerSnapshot, params: Mapping[str, Tensor]) -> "OptimizerState":
        state = cls(t=snapshot.t)
        for name, param in params.items():
            state.m[name] = snapshot.m[name].astype(param.dtype) if name in snapshot.m else np.zeros_like(param.data)
            state.v[name] = snapshot.v[name].astype(param.dtype) if name in snapshot.v else np.zeros_like(param.data)
        return state


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for name in grads:
            grads[name] = grads[name] * grads[name].dtype.type(factor)
    return norm


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
    clip_norm: Optional[float] = None,
) -> OptimizerState:
    """One in-place Adam update of every parameter named in ``grads``."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient", parameter=name)
        if grad.shape != params[name].shape:
            raise UsageError(f"gradient for {name} has shape {grad.shape}, parameter {params[name].shape}")

    grads = dict(grads)
    if clip_norm is not None:
        clip_gradients(grads, clip_norm)

    beta1, beta2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for name, grad in grads.items():
        param = params[name]
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m[...] = beta1 * m + (1.0 - beta1) * grad
        v[...] = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return state
