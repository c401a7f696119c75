"""Central-difference gradient checking.

The check runs at 64-bit precision. Parameters are perturbed one
coordinate at a time; ReLU masks and max-pool winners are recorded during
every evaluation so that differences straddling a kink are detected and
either retried with a smaller step or skipped.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from src.config.base_config import settings
from src.errors import UsageError
from src.tensor import ops
from src.tensor.core import Tensor, backward, get_all_primitives, no_grad, record_switches

LossBuilder = Callable[[], Tensor]


@dataclass
class ParameterError:
    """Worst relative error seen on one named parameter."""

    max_relative_error: float = 0.0
    worst_index: int = -1
    n_sampled: int = 0
    n_skipped: int = 0


@dataclass
class GradCheckResult:
    max_relative_error: float = 0.0
    worst_parameter: Optional[str] = None
    worst_index: int = -1
    n_sampled: int = 0
    n_skipped: int = 0
    n_requested: Optional[int] = None
    eps: float = 0.0
    per_parameter: Dict[str, ParameterError] = field(default_factory=dict)

    @property
    def short(self) -> bool:
        """Fewer coordinates were checked than requested."""
        return self.n_requested is not None and self.n_sampled < self.n_requested

    def passed(self, tolerance: float) -> bool:
        return self.n_sampled > 0 and not self.short and self.max_relative_error < tolerance

    def offenders(self, tolerance: float) -> List[str]:
        return [
            name
            for name, entry in self.per_parameter.items()
            if entry.max_relative_error >= tolerance
        ]

    def to_dict(self) -> Dict:
        return {
            "max_relative_error": self.max_relative_error,
            "worst_parameter": self.worst_parameter,
            "worst_index": self.worst_index,
            "n_sampled": self.n_sampled,
            "n_skipped": self.n_skipped,
            "n_requested": self.n_requested,
            "eps": self.eps,
            "per_parameter": {
                name: {
                    "max_relative_error": entry.max_relative_error,
                    "worst_index": entry.worst_index,
                    "n_sampled": entry.n_sampled,
                    "n_skipped": entry.n_skipped,
                }
                for name, entry in self.per_parameter.items()
            },
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _evaluate(builder: LossBuilder) -> Tuple[float, List[bytes]]:
    with no_grad(), record_switches() as patterns:
        loss = builder()
    return loss.item(), patterns


def _coordinate_order(
    params: Mapping[str, Tensor], shuffle: bool, rng: np.random.Generator
) -> List[Tuple[str, int]]:
    """Every (parameter, flat index) pair, in random order when ``shuffle``."""
    names = list(params)
    sizes = np.array([params[name].size for name in names], dtype=np.int64)
    total = int(sizes.sum())
    flat = rng.permutation(total) if shuffle else np.arange(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    owners = np.searchsorted(offsets, flat, side="right") - 1
    return [(names[owner], int(index - offsets[owner])) for owner, index in zip(owners, flat)]


def grad_check(
    builder: LossBuilder,
    params: Mapping[str, Tensor],
    eps: Optional[float] = None,
    n_samples: Optional[int] = None,
    seed: int = 0,
    max_shrink: int = 3,
    progress: bool = False,
) -> GradCheckResult:
    """Compare backward() gradients with central differences.

    ``builder`` must be deterministic and read the parameter tensors in
    ``params`` each time it is called. ``n_samples=None`` checks every
    coordinate. Otherwise coordinates are drawn at random until
    ``n_samples`` have been compared; a coordinate skipped at a kink is
    replaced by the next draw.
    """
    eps = settings.gradcheck_eps if eps is None else eps
    for name, param in params.items():
        if param.dtype != np.float64:
            raise UsageError(f"grad_check needs float64 parameters; {name} is {param.dtype}")
        param.requires_grad = True
        param.grad = None

    loss = builder()
    backward(loss)
    analytic = {
        name: (param.grad.copy() if param.grad is not None else np.zeros_like(param.data))
        for name, param in params.items()
    }
    _, base_patterns = _evaluate(builder)

    rng = np.random.default_rng(seed)
    coordinates = _coordinate_order(params, n_samples is not None, rng)
    target = len(coordinates) if n_samples is None else min(n_samples, len(coordinates))
    result = GradCheckResult(
        eps=eps,
        n_requested=None if n_samples is None else target,
        per_parameter={name: ParameterError() for name in params},
    )

    bar = tqdm(total=target, desc="grad check", disable=not progress, leave=False)
    for name, index in coordinates:
        if result.n_sampled >= target:
            break
        param = params[name]
        original = param.data.flat[index]
        numeric = None
        step = eps
        for _ in range(max_shrink + 1):
            param.data.flat[index] = original + step
            plus, plus_patterns = _evaluate(builder)
            param.data.flat[index] = original - step
            minus, minus_patterns = _evaluate(builder)
            param.data.flat[index] = original
            if plus_patterns == base_patterns and minus_patterns == base_patterns:
                numeric = (plus - minus) / (2 * step)
                break
            step /= 10

        entry = result.per_parameter[name]
        if numeric is None:
            logger.debug(f"grad check skipped {name}[{index}]: kink within {step * 10:.1e}")
            entry.n_skipped += 1
            result.n_skipped += 1
            continue

        error = relative_error(float(analytic[name].flat[index]), numeric)
        entry.n_sampled += 1
        result.n_sampled += 1
        bar.update(1)
        if error > entry.max_relative_error or entry.worst_index < 0:
            entry.max_relative_error = max(entry.max_relative_error, error)
            entry.worst_index = index
        if error > result.max_relative_error or result.worst_parameter is None:
            result.max_relative_error = max(result.max_relative_error, error)
            result.worst_parameter = name
            result.worst_index = index

    bar.close()
    if result.n_skipped:
        logger.warning(f"grad check skipped {result.n_skipped} coordinates at kinks")
    if result.short:
        logger.warning(f"grad check compared {result.n_sampled} of {result.n_requested} requested coordinates")
    return result


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def primitive_cases(seed: int = 0) -> Dict[str, Tuple[LossBuilder, Dict[str, Tensor]]]:
    """One small random problem per registered primitive kind."""
    rng = np.random.default_rng(seed)
    cases: Dict[str, Tuple[LossBuilder, Dict[str, Tensor]]] = {}

    def case(kind: str, fn: Callable[..., Tensor], **inputs: Tensor) -> None:
        weights_rng = np.random.default_rng(rng.integers(2**32))
        with no_grad():
            sample = fn(**inputs)
        weights = Tensor(weights_rng.standard_normal(sample.shape), dtype=np.float64)
        cases[kind] = (lambda: ops.sum(ops.mul(fn(**inputs), weights)), dict(inputs))

    case("add", lambda a, b: ops.add(a, b), a=_leaf(rng, 3, 4), b=_leaf(rng, 3, 4))
    case("mul", lambda a, b: ops.mul(a, b), a=_leaf(rng, 3, 4), b=_leaf(rng, 3, 4))
    case("scale", lambda x: ops.scale(x, 1.7), x=_leaf(rng, 4, 5))
    case("bias_add", lambda x, bias: ops.bias_add(x, bias), x=_leaf(rng, 2, 3, 4, 4), bias=_leaf(rng, 3))
    case("matmul", lambda a, b: ops.matmul(a, b), a=_leaf(rng, 2, 3, 4), b=_leaf(rng, 2, 4, 5))
    case("relu", lambda x: ops.relu(x), x=_leaf(rng, 4, 6))
    case("concat", lambda a, b: ops.concat([a, b], axis=1), a=_leaf(rng, 2, 3, 4), b=_leaf(rng, 2, 2, 4))
    case("permute", lambda x: ops.permute(x, (2, 0, 1)), x=_leaf(rng, 2, 3, 4))
    case("reshape", lambda x: ops.reshape(x, (6, 4)), x=_leaf(rng, 2, 3, 4))
    case("sum", lambda x: ops.sum(x), x=_leaf(rng, 3, 4))
    case("mean", lambda x: ops.mean(x), x=_leaf(rng, 3, 4))
    indices = np.array([0, 2, 2, 4, 1])
    case("take", lambda table: ops.take(table, indices), table=_leaf(rng, 5, 3))
    case("softmax", lambda x: ops.softmax(x, axis=-1), x=_leaf(rng, 3, 5))
    target = rng.integers(0, 3, size=(2, 4, 4))
    case("cross_entropy", lambda logits: ops.cross_entropy_loss(logits, target), logits=_leaf(rng, 2, 3, 4, 4))
    case(
        "conv2d",
        lambda x, weight: ops.conv2d(x, weight, stride=1, zero_pad=1),
        x=_leaf(rng, 2, 3, 6, 6),
        weight=_leaf(rng, 4, 3, 3, 3),
    )
    case("maxpool2d", lambda x: ops.maxpool2d(x), x=_leaf(rng, 1, 2, 6, 6))
    case("deconv2d", lambda x, weight: ops.deconv2d(x, weight), x=_leaf(rng, 1, 3, 3, 3), weight=_leaf(rng, 3, 2, 2, 2))
    case(
        "batch_norm",
        lambda x, gamma, beta: ops.batch_norm(x, gamma, beta),
        x=_leaf(rng, 3, 2, 4, 4),
        gamma=_leaf(rng, 2),
        beta=_leaf(rng, 2),
    )
    return cases


def check_primitives(eps: Optional[float] = None, seed: int = 0) -> Dict[str, GradCheckResult]:
    """Gradient-check every registered primitive kind exactly once."""
    cases = primitive_cases(seed)
    missing = sorted(set(get_all_primitives()) - set(cases))
    if missing:
        raise UsageError(f"no gradient-check case for primitives: {', '.join(missing)}")
    results: Dict[str, GradCheckResult] = {}
    for kind in sorted(get_all_primitives()):
        builder, params = cases[kind]
        results[kind] = grad_check(builder, params, eps=eps, seed=seed)
        logger.debug(f"grad check {kind}: max relative error {results[kind].max_relative_error:.2e}")
    return results
