"""Dense tensors, primitives and reverse-mode autodiff."""

from src.tensor import ops
from src.tensor.core import (
    MacCounter,
    OpRecord,
    Primitive,
    Tensor,
    apply,
    backward,
    count_macs,
    get_all_primitives,
    get_default_dtype,
    get_primitive,
    is_grad_enabled,
    kernel_threads,
    mac_stage,
    no_grad,
    precision,
    record_switches,
    zero_grads,
)
from src.tensor.gradcheck import GradCheckResult, check_primitives, grad_check

__all__ = [
    "ops",
    "MacCounter",
    "OpRecord",
    "Primitive",
    "Tensor",
    "apply",
    "backward",
    "count_macs",
    "get_all_primitives",
    "get_default_dtype",
    "get_primitive",
    "is_grad_enabled",
    "kernel_threads",
    "mac_stage",
    "no_grad",
    "precision",
    "record_switches",
    "zero_grads",
    "GradCheckResult",
    "check_primitives",
    "grad_check",
]
