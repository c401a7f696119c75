"""Dense tensor value type and reverse-mode automatic differentiation.

Every differentiable operation is a registered :class:`Primitive`. Calling
:func:`apply` runs the primitive's forward kernel and, when any input
requires a gradient, attaches an :class:`OpRecord` to the output so that
:func:`backward` can replay the graph in reverse topological order.
"""

from abc import ABC, abstractmethod
from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from threadpoolctl import threadpool_limits

from src.config.base_config import settings
from src.errors import UsageError

_DTYPES = {"float32": np.dtype(np.float32), "float64": np.dtype(np.float64)}

_default_dtype: ContextVar[Optional[np.dtype]] = ContextVar("default_dtype", default=None)
_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)
_switch_recorder: ContextVar[Optional[List[bytes]]] = ContextVar("switch_recorder", default=None)
_mac_counter: ContextVar[Optional["MacCounter"]] = ContextVar("mac_counter", default=None)
_mac_stage: ContextVar[str] = ContextVar("mac_stage", default="other")


def get_default_dtype() -> np.dtype:
    """Dtype used for new floating tensors when none is given."""
    dtype = _default_dtype.get()
    if dtype is None:
        return _DTYPES[settings.default_dtype]
    return dtype


@contextmanager
def precision(name: str) -> Iterator[np.dtype]:
    """Select the default floating dtype ("float32" or "float64") for a block."""
    if name not in _DTYPES:
        raise UsageError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    token = _default_dtype.set(_DTYPES[name])
    try:
        yield _DTYPES[name]
    finally:
        _default_dtype.reset(token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def record_switches() -> Iterator[List[bytes]]:
    """Collect the switching patterns of piecewise-linear kernels.

    ReLU masks and max-pool winners are appended in execution order. Two
    evaluations that produce the same list lie on the same linear piece.
    """
    patterns: List[bytes] = []
    token = _switch_recorder.set(patterns)
    try:
        yield patterns
    finally:
        _switch_recorder.reset(token)


def note_switch(pattern: np.ndarray) -> None:
    patterns = _switch_recorder.get()
    if patterns is not None:
        if pattern.dtype == np.bool_:
            patterns.append(np.packbits(pattern).tobytes())
        else:
            patterns.append(np.ascontiguousarray(pattern).tobytes())


@dataclass
class MacCounter:
    """Multiply-accumulate counts keyed by stage name."""

    counts: Dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def total(self, *stages: str) -> int:
        if not stages:
            return sum(self.counts.values())
        return sum(self.counts.get(stage, 0) for stage in stages)


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count multiply-accumulates of matrix products executed in the block."""
    counter = MacCounter()
    token = _mac_counter.set(counter)
    try:
        yield counter
    finally:
        _mac_counter.reset(token)


@contextmanager
def mac_stage(name: str) -> Iterator[None]:
    """Attribute matrix products inside the block to ``name``."""
    token = _mac_stage.set(name)
    try:
        yield
    finally:
        _mac_stage.reset(token)


def record_macs(count: int) -> None:
    counter = _mac_counter.get()
    if counter is not None:
        counter.counts[_mac_stage.get()] += int(count)


@contextmanager
def kernel_threads(limit: Optional[int] = None) -> Iterator[None]:
    """Bound the thread pools used by BLAS-backed kernels.

    Falls back to ``settings.threads`` (WAUNET_THREADS); no limit when both
    are unset. Results do not depend on the limit.
    """
    limit = limit if limit is not None else settings.threads
    if limit is None:
        yield
        return
    with threadpool_limits(limits=limit):
        yield


class Primitive(ABC):
    """A differentiable kernel.

    ``forward`` receives raw arrays and keyword attributes and returns the
    output array together with the values its backward pass needs.
    ``backward`` receives the output gradient, those saved values and a
    flag per input telling whether that input needs a gradient.
    """

    kind: ClassVar[str]

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **attrs: Any) -> Tuple[np.ndarray, Dict[str, Any]]:
        raise NotImplementedError

    @abstractmethod
    def backward(
        self, grad: np.ndarray, saved: Dict[str, Any], needs: Tuple[bool, ...]
    ) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


# Global primitive registry
_primitive_registry: Dict[str, Primitive] = {}


def register_primitive(cls):
    """Class decorator adding one instance of ``cls`` to the registry."""
    if cls.kind in _primitive_registry:
        raise UsageError(f"primitive {cls.kind!r} registered twice")
    _primitive_registry[cls.kind] = cls()
    return cls


def get_primitive(kind: str) -> Primitive:
    try:
        return _primitive_registry[kind]
    except KeyError:
        raise UsageError(f"unknown primitive {kind!r}") from None


def get_all_primitives() -> Dict[str, Primitive]:
    return dict(_primitive_registry)


@dataclass(eq=False)
class OpRecord:
    """Node of the autodiff graph: which primitive produced a tensor from what."""

    kind: str
    inputs: Tuple["Tensor", ...]
    saved: Dict[str, Any]


class Tensor:
    """N-dimensional array that may take part in an autodiff graph."""

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
        name: Optional[str] = None,
    ):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif array.dtype not in (np.float32, np.float64):
            array = array.astype(get_default_dtype())
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.producer: Optional[OpRecord] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.producer is None

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from src.tensor import ops

        return ops.add(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        from src.tensor import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from src.tensor import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from src.tensor import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        origin = f" producer={self.producer.kind}" if self.producer else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}{origin}, requires_grad={self.requires_grad})"


def apply(kind: str, *inputs: Tensor, **attrs: Any) -> Tensor:
    """Run primitive ``kind`` on ``inputs`` and record it for backward."""
    dtypes = {t.dtype for t in inputs}
    if len(dtypes) > 1:
        raise UsageError(f"{kind}: mixed input dtypes {sorted(str(d) for d in dtypes)}")
    primitive = get_primitive(kind)
    out_data, saved = primitive.forward(*(t.data for t in inputs), **attrs)
    requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires_grad, dtype=out_data.dtype)
    if requires_grad:
        out.producer = OpRecord(kind=kind, inputs=tuple(inputs), saved=saved)
    return out


def _reverse_topological(root: Tensor) -> List[Tensor]:
    """Non-leaf tensors reachable from ``root``, root first."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.producer.inputs:
            if parent.producer is not None and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``grad`` of every leaf that requires it."""
    if loss.ndim != 0:
        raise UsageError(f"backward() needs a scalar root, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.producer is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    pending: Dict[int, np.ndarray] = {id(loss): seed}
    for node in _reverse_topological(loss):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        record = node.producer
        needs = tuple(t.requires_grad for t in record.inputs)
        input_grads = get_primitive(record.kind).backward(grad, record.saved, needs)
        for tensor, input_grad in zip(record.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            input_grad = np.asarray(input_grad, dtype=tensor.dtype)
            if tensor.producer is None:
                tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + input_grad
            else:
                pending[id(tensor)] = input_grad
    if pending:
        logger.debug(f"backward left {len(pending)} unconsumed gradients")


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for tensor in tensors:
        tensor.grad = None
