"""Analytic attention cost and the axial-versus-full scaling benchmark."""

import time
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Literal

import numpy as np
from loguru import logger
from tqdm import tqdm

from src.attention.axial import AttentionBlockSpec, axial_attend, init_attention_block
from src.attention.reference import full_attention_reference
from src.config.run_config import BenchConfig
from src.errors import UsageError
from src.tensor.core import Tensor, count_macs, no_grad

Mode = Literal["axial", "full"]

# Expected log-log slope of wall-clock time against token count HW.
THEORETICAL_EXPONENTS: Dict[str, float] = {"axial": 1.5, "full": 2.0}


def count_attention_flops(height: int, width: int, channels: int, mode: Mode, batch: int = 1) -> int:
    """Multiply-accumulates of the score and aggregation stages.

    Axial: 2 * N * HW * (H + W) * C. Full: 2 * N * (HW)^2 * C.
    """
    if min(height, width, channels, batch) < 1:
        raise UsageError("attention dimensions must be positive")
    tokens = height * width
    if mode == "axial":
        return 2 * batch * tokens * (height + width) * channels
    if mode == "full":
        return 2 * batch * tokens * tokens * channels
    raise UsageError(f"unknown attention mode {mode!r}")


def count_positional_macs(height: int, width: int, channels: int, batch: int = 1) -> int:
    """Relative-position terms of one axial layer (both axis passes)."""
    return 3 * batch * height * width * (height + width) * channels


def count_projection_macs(height: int, width: int, channels: int, passes: int, batch: int = 1) -> int:
    return 4 * passes * batch * height * width * channels * channels


@dataclass
class BenchRow:
    mode: str
    size: int
    tokens: int
    macs_formula: int
    macs_measured: int
    seconds: float

    def to_dict(self) -> Dict:
        return asdict(self)


def _attention_pass(mode: Mode, x: Tensor, block) -> None:
    layer = block.layers[0]
    if mode == "axial":
        axial_attend(x, layer.height, "height")
        axial_attend(x, layer.width, "width")
    else:
        full_attention_reference(x, layer.height)


def run_attention_bench(config: BenchConfig, seed: int = 0, progress: bool = True) -> List[BenchRow]:
    """Time one attention layer at every size; full attention stops at ``full_max_size``."""
    rng = np.random.default_rng(seed)
    rows: List[BenchRow] = []
    jobs = [(mode, size) for mode in ("axial", "full") for size in config.sizes]
    jobs = [(mode, size) for mode, size in jobs if mode == "axial" or size <= config.full_max_size]
    for mode, size in tqdm(jobs, desc="bench", disable=not progress):
        block = init_attention_block(
            AttentionBlockSpec(depth=1, heads=config.heads),
            config.channels,
            size,
            size,
            rng,
            zero_output=False,
        )
        x = Tensor(rng.standard_normal((config.batch, config.channels, size, size)), dtype=np.float32)
        with no_grad():
            with count_macs() as counter:
                _attention_pass(mode, x, block)
            measured = counter.total("score", "aggregate")
            timings = []
            for _ in range(config.repeats):
                start = time.perf_counter()
                _attention_pass(mode, x, block)
                timings.append(time.perf_counter() - start)
        row = BenchRow(
            mode=mode,
            size=size,
            tokens=size * size,
            macs_formula=count_attention_flops(size, size, config.channels, mode, config.batch),
            macs_measured=measured,
            seconds=float(min(timings)),
        )
        logger.debug(f"bench {mode} {size}x{size}: {row.seconds * 1000:.2f} ms, {row.macs_measured} MACs")
        rows.append(row)
    return rows


def fit_loglog_slope(xs: List[float], ys: List[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(xs) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)
    return float(slope)


def summarize_slopes(rows: List[BenchRow], tolerance: float = 0.2) -> Dict[str, Dict[str, Any]]:
    """Fitted time and MAC slopes against token count, per mode.

    ``within_tolerance`` is None when a mode has fewer than two sizes.
    """
    summary: Dict[str, Dict[str, Any]] = {}
    for mode in ("axial", "full"):
        selected = [row for row in rows if row.mode == mode]
        if not selected:
            continue
        tokens = [row.tokens for row in selected]
        time_slope = fit_loglog_slope(tokens, [row.seconds for row in selected])
        summary[mode] = {
            "time_slope": time_slope,
            "macs_slope": fit_loglog_slope(tokens, [row.macs_formula for row in selected]),
            "theoretical": THEORETICAL_EXPONENTS[mode],
            "within_tolerance": (
                None if np.isnan(time_slope) else bool(abs(time_slope - THEORETICAL_EXPONENTS[mode]) <= tolerance)
            ),
        }
    return summary
