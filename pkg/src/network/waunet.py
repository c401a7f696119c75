"""WAU-net graph: nested CNN grid, per-level axial attention, decoder column.

Node wiring, with ``L`` levels and ``up_i`` the deconvolution from level
``i + 1`` to level ``i``::

    X[0,0] = block(image)
    X[i,0] = block(maxpool(X[i-1,0]))
    X[i,j] = block(fuse(X[i,0..j-1], up_i(X[i+1,j-1])))       1 <= j <= L-1-i
    A[i]   = attention(X[i,L-1-i])
    D[L-1] = A[L-1]
    D[i]   = block(fuse(X[i,0..L-2-i], A[i], up_i(D[i+1])))
    logits = head(D[0])

Each block is three 3x3 convolutions, each followed by ReLU. A fuse is a
channel concatenation followed by a 1x1 convolution.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.attention.axial import (
    AttentionBlock,
    AttentionBlockSpec,
    attention_block,
    axial_attend,
    init_attention_block,
)
from src.config.base_config import settings
from src.config.run_config import NetConfig
from src.errors import DimensionError
from src.metrics.labelmap import LabelMap
from src.network.params import (
    ParamStore,
    analytic_parameter_count,
    batch_norm_params,
    kaiming_conv,
    kaiming_deconv,
    zero_conv,
)
from src.tensor import ops
from src.tensor.core import Tensor, no_grad, precision
from src.tensor.gradcheck import GradCheckResult, grad_check


@dataclass(frozen=True)
class Edge:
    kind: str  # down, up, skip, attention, head
    source: str
    target: str


@dataclass
class NetworkGraph:
    config: NetConfig
    seed: int
    params: ParamStore = field(default_factory=dict)
    attention: Dict[int, AttentionBlock] = field(default_factory=dict)
    nodes: List[str] = field(default_factory=list)
    topology: List[Edge] = field(default_factory=list)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.precision)

    def named_parameters(self) -> ParamStore:
        return dict(self.params)

    def attention_parameter_names(self) -> List[str]:
        return [name for name in self.params if name.startswith("att")]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def __call__(self, images: Tensor) -> Tensor:
        return forward(self, images)


def _node(i: int, j: int) -> str:
    return f"x{i}_{j}"


def _add_block(graph: NetworkGraph, name: str, in_channels: int, out_channels: int, rng, dtype) -> None:
    for c in range(3):
        kaiming_conv(graph.params, f"{name}.conv{c}", in_channels if c == 0 else out_channels, out_channels, 3, rng, dtype)
        if graph.config.batch_norm:
            batch_norm_params(graph.params, f"{name}.bn{c}", out_channels, dtype)


def build_waunet(config: NetConfig, seed: int = 0) -> NetworkGraph:
    """Initialize every parameter deterministically from ``seed``.

    Convolutions and attention draw from separate streams, so toggling
    ``use_attention`` leaves the convolution weights unchanged.
    """
    conv_seq, attention_seq = np.random.SeedSequence(seed).spawn(2)
    conv_rng = np.random.default_rng(conv_seq)
    attention_rng = np.random.default_rng(attention_seq)
    dtype = np.dtype(config.precision)
    graph = NetworkGraph(config=config, seed=seed)
    levels, filters = config.levels, config.filters

    for i in range(levels):
        in_channels = config.in_channels if i == 0 else filters[i - 1]
        _add_block(graph, _node(i, 0), in_channels, filters[i], conv_rng, dtype)
        graph.nodes.append(_node(i, 0))
        graph.topology.append(Edge("down", "image" if i == 0 else _node(i - 1, 0), _node(i, 0)))

    for i in range(levels - 1):
        kaiming_deconv(graph.params, f"up{i}", filters[i + 1], filters[i], conv_rng, dtype)

    for column in range(1, levels):
        for i in range(levels - column):
            f = filters[i]
            name = _node(i, column)
            kaiming_conv(graph.params, f"{name}.fuse", (column + 1) * f, f, 1, conv_rng, dtype)
            _add_block(graph, name, f, f, conv_rng, dtype)
            graph.nodes.append(name)
            graph.topology.extend(Edge("skip", _node(i, j), name) for j in range(column))
            graph.topology.append(Edge("up", _node(i + 1, column - 1), name))

    for i in range(levels):
        last = _node(i, levels - 1 - i)
        depth = config.attention_depths[i]
        if config.use_attention and depth:
            size = config.level_size(i)
            block = init_attention_block(
                AttentionBlockSpec(depth=depth, heads=config.heads),
                filters[i],
                size,
                size,
                attention_rng,
                dtype,
                zero_output=config.zero_init_attention,
            )
            graph.attention[i] = block
            graph.params.update(block.named_parameters(f"att{i}."))
        graph.topology.append(Edge("attention", last, f"a{i}"))

    for i in reversed(range(levels - 1)):
        f = filters[i]
        name = f"d{i}"
        kaiming_conv(graph.params, f"{name}.fuse", (levels - i + 1) * f, f, 1, conv_rng, dtype)
        _add_block(graph, name, f, f, conv_rng, dtype)
        graph.nodes.append(name)
        graph.topology.extend(Edge("skip", _node(i, j), name) for j in range(levels - 1 - i))
        graph.topology.append(Edge("skip", f"a{i}", name))
        graph.topology.append(Edge("up", f"d{i + 1}", name))

    if config.zero_init_head:
        zero_conv(graph.params, "head", filters[0], config.num_classes, 1, dtype)
    else:
        kaiming_conv(graph.params, "head", filters[0], config.num_classes, 1, conv_rng, dtype)
    graph.topology.append(Edge("head", "d0", "logits"))

    count = graph.parameter_count()
    expected = analytic_parameter_count(config)
    if count != expected:
        logger.warning(f"parameter count {count} differs from closed form {expected}")
    logger.debug(f"built WAU-net: {levels} levels, {count} parameters, seed {seed}")
    return graph


def fuse(feature_maps: Sequence[Tensor], weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Concatenate along channels, then a 1x1 convolution to ``weight.shape[0]`` channels."""
    if not feature_maps:
        raise DimensionError("fuse needs at least one feature map")
    reference = feature_maps[0].shape
    for fm in feature_maps:
        if fm.ndim != 4 or fm.shape[0] != reference[0] or fm.shape[2:] != reference[2:]:
            raise DimensionError(f"fuse inputs disagree in N/H/W: {[m.shape for m in feature_maps]}")
    stacked = ops.concat(list(feature_maps), axis=1) if len(feature_maps) > 1 else feature_maps[0]
    return ops.conv2d(stacked, weight, bias, stride=1, zero_pad=0)


def _block(graph: NetworkGraph, name: str, x: Tensor) -> Tensor:
    p = graph.params
    for c in range(3):
        x = ops.conv2d(x, p[f"{name}.conv{c}.weight"], p[f"{name}.conv{c}.bias"], stride=1, zero_pad=1)
        if graph.config.batch_norm:
            x = ops.batch_norm(x, p[f"{name}.bn{c}.gamma"], p[f"{name}.bn{c}.beta"])
        x = ops.relu(x)
    return x


def _fuse_node(graph: NetworkGraph, name: str, inputs: List[Tensor]) -> Tensor:
    fused = fuse(inputs, graph.params[f"{name}.fuse.weight"], graph.params[f"{name}.fuse.bias"])
    return _block(graph, name, fused)


def _up(graph: NetworkGraph, level: int, x: Tensor) -> Tensor:
    return ops.deconv2d(x, graph.params[f"up{level}.weight"], graph.params[f"up{level}.bias"])


def forward(graph: NetworkGraph, images: Tensor) -> Tensor:
    """Per-class logits [N, K, H, W] for images [N, C, H, W]."""
    config = graph.config
    size = config.input_size
    if images.ndim != 4 or images.shape[1] != config.in_channels or images.shape[2:] != (size, size):
        raise DimensionError(
            f"expected images [N, {config.in_channels}, {size}, {size}], got {images.shape}"
        )
    if images.dtype != graph.dtype:
        images = Tensor(images.data, dtype=graph.dtype)

    levels = config.levels
    x: Dict[Tuple[int, int], Tensor] = {(0, 0): _block(graph, _node(0, 0), images)}
    for i in range(1, levels):
        x[(i, 0)] = _block(graph, _node(i, 0), ops.maxpool2d(x[(i - 1, 0)]))
    for column in range(1, levels):
        for i in range(levels - column):
            inputs = [x[(i, j)] for j in range(column)] + [_up(graph, i, x[(i + 1, column - 1)])]
            x[(i, column)] = _fuse_node(graph, _node(i, column), inputs)

    attended: Dict[int, Tensor] = {}
    for i in range(levels):
        last = x[(i, levels - 1 - i)]
        attended[i] = attention_block(last, graph.attention[i]) if i in graph.attention else last

    decoded = attended[levels - 1]
    for i in reversed(range(levels - 1)):
        inputs = [x[(i, j)] for j in range(levels - 1 - i)] + [attended[i], _up(graph, i, decoded)]
        decoded = _fuse_node(graph, f"d{i}", inputs)

    return ops.conv2d(decoded, graph.params["head.weight"], graph.params["head.bias"])


def predict_labels(logits: Tensor, spacing: Tuple[float, float] = (1.0, 1.0)) -> LabelMap:
    """Per-pixel argmax over classes; ties go to the smaller class id."""
    if logits.ndim != 4 or logits.shape[1] < 2:
        raise DimensionError(f"logits must be [N, K>=2, H, W], got {logits.shape}")
    classes = np.argmax(logits.numpy(), axis=1)
    return LabelMap(classes, spacing=spacing, num_classes=logits.shape[1])


def network_grad_check(
    config: Optional[NetConfig] = None,
    seed: int = 0,
    n_samples: Optional[int] = None,
    eps: Optional[float] = None,
    batch: int = 1,
    progress: bool = False,
) -> GradCheckResult:
    """Gradient-check the full network at 64-bit on one random labelled batch.

    Zero initializations are switched off so every parameter receives a
    non-trivial gradient.
    """
    base = config or NetConfig()
    config = base.model_copy(
        update={"precision": "float64", "zero_init_attention": False, "zero_init_head": False}
    )
    rng = np.random.default_rng(seed)
    with precision("float64"):
        graph = build_waunet(config, seed)
        size = config.input_size
        images = Tensor(rng.random((batch, config.in_channels, size, size)), dtype=np.float64)
        target = rng.integers(0, config.num_classes, size=(batch, size, size))

        def loss() -> Tensor:
            return ops.cross_entropy_loss(forward(graph, images), target)

        samples = settings.gradcheck_samples if n_samples is None else n_samples
        return grad_check(loss, graph.params, eps=eps, n_samples=samples, seed=seed, progress=progress)


def layer_grad_checks(seed: int = 0, eps: Optional[float] = None, n_samples: Optional[int] = None) -> Dict[str, GradCheckResult]:
    """Gradient-check each composite layer type at 64-bit.

    ``attention_layer`` is one height pass followed by one width pass with
    non-zero positional tables; ``attention_block`` stacks two of them with
    residual connections.
    """
    rng = np.random.default_rng(seed)
    results: Dict[str, GradCheckResult] = {}

    def leaf(*shape: int) -> Tensor:
        return Tensor(0.5 * rng.standard_normal(shape), requires_grad=True, dtype=np.float64)

    def run(name: str, fn, params: Dict[str, Tensor]) -> None:
        with no_grad():
            sample = fn()
        weights = Tensor(rng.standard_normal(sample.shape), dtype=np.float64)
        results[name] = grad_check(
            lambda: ops.sum(ops.mul(fn(), weights)), params, eps=eps, n_samples=n_samples, seed=seed
        )
        logger.debug(f"grad check {name}: max relative error {results[name].max_relative_error:.2e}")

    with precision("float64"):
        config = NetConfig(
            levels=1, filters=[4], attention_depths=[0], input_size=6, in_channels=2, precision="float64"
        )
        holder = NetworkGraph(config=config, seed=seed)
        _add_block(holder, "block", 2, 4, rng, np.float64)
        image = leaf(1, 2, 6, 6)
        run("conv_block", lambda: _block(holder, "block", image), {"image": image, **holder.params})

        a, b = leaf(1, 3, 4, 4), leaf(1, 2, 4, 4)
        fuse_weight, fuse_bias = leaf(4, 5, 1, 1), leaf(4)
        run(
            "fuse",
            lambda: fuse([a, b], fuse_weight, fuse_bias),
            {"a": a, "b": b, "fuse.weight": fuse_weight, "fuse.bias": fuse_bias},
        )

        low = leaf(1, 4, 3, 3)
        up_weight, up_bias = leaf(4, 2, 2, 2), leaf(2)
        run("upsample", lambda: ops.deconv2d(low, up_weight, up_bias), {"x": low, "up.weight": up_weight, "up.bias": up_bias})

        tokens = leaf(2, 4, 3, 5)
        block = init_attention_block(AttentionBlockSpec(depth=2, heads=2), 4, 3, 5, rng, np.float64, zero_output=False)
        layer = block.layers[0]
        run(
            "attention_layer",
            lambda: axial_attend(axial_attend(tokens, layer.height, "height"), layer.width, "width"),
            {"x": tokens, **layer.named_parameters()},
        )
        run("attention_block", lambda: attention_block(tokens, block), {"x": tokens, **block.named_parameters()})
    return results
