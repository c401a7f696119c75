"""``gradcheck`` and ``bench``."""

import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import pandas as pd
from loguru import logger
from rich.table import Table

from src.attention.complexity import count_attention_flops, run_attention_bench, summarize_slopes
from src.commands.base import common_options, console, handle_errors, prepare_run, progress_enabled
from src.errors import ThresholdError
from src.network.waunet import layer_grad_checks, network_grad_check
from src.tensor.gradcheck import GradCheckResult, check_primitives


def _section(results: Dict[str, GradCheckResult], tolerance: float) -> Dict:
    return {
        "tolerance": tolerance,
        "passed": all(result.passed(tolerance) for result in results.values()),
        "results": {name: result.to_dict() for name, result in results.items()},
    }


def collect_offenders(sections: Dict[str, Tuple[Dict[str, GradCheckResult], float]]) -> List[str]:
    """``section/check: parameter`` for every parameter at or above its tolerance.

    A check that compared no coordinate, or fewer than requested, is reported by name.
    """
    offenders = []
    for section, (results, tolerance) in sections.items():
        for name, result in results.items():
            if result.n_sampled == 0:
                offenders.append(f"{section}/{name}: no coordinate could be checked")
            elif result.short:
                offenders.append(f"{section}/{name}: only {result.n_sampled} of {result.n_requested} coordinates checked")
            offenders.extend(f"{section}/{name}: {param}" for param in result.offenders(tolerance))
    return offenders


@click.command("gradcheck")
@common_options
@click.option("--eps", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Central-difference step.")
@click.option("--samples", type=click.IntRange(min=1), default=None, help="Sampled network coordinates.")
@click.option("--primitive-tol", type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option("--network-tol", type=click.FloatRange(min=0.0, min_open=True), default=None)
@handle_errors
def gradcheck(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    eps: Optional[float],
    samples: Optional[int],
    primitive_tol: Optional[float],
    network_tol: Optional[float],
):
    """Finite-difference check of every primitive, every layer type and the network."""
    config = prepare_run(
        "gradcheck",
        config_path,
        seed,
        out,
        force,
        overrides={
            "gradcheck": {
                "eps": eps,
                "samples": samples,
                "primitive_tol": primitive_tol,
                "network_tol": network_tol,
            }
        },
    )
    checks = config.gradcheck
    primitives = check_primitives(eps=checks.eps, seed=config.seed)
    layers = layer_grad_checks(seed=config.seed, eps=checks.eps)
    network = {
        "waunet": network_grad_check(
            config.net, seed=config.seed, n_samples=checks.samples, eps=checks.eps, progress=progress_enabled()
        )
    }
    sections = {
        "primitives": (primitives, checks.primitive_tol),
        "layers": (layers, checks.network_tol),
        "network": (network, checks.network_tol),
    }
    offenders = collect_offenders(sections)
    report = {name: _section(results, tol) for name, (results, tol) in sections.items()}
    report["passed"] = not offenders
    report["offenders"] = offenders
    Path(config.out, "gradcheck.json").write_text(json.dumps(report, indent=2) + "\n")

    table = Table(title="Gradient check (64-bit)")
    table.add_column("check", style="cyan")
    table.add_column("max rel. error", justify="right")
    table.add_column("worst parameter")
    table.add_column("sampled", justify="right")
    table.add_column("skipped", justify="right")
    for section, (results, tolerance) in sections.items():
        for name, result in results.items():
            table.add_row(
                f"{section}/{name}",
                f"{result.max_relative_error:.2e}",
                result.worst_parameter or "-",
                str(result.n_sampled),
                str(result.n_skipped),
                style=None if result.passed(tolerance) else "bold red",
            )
    console.print(table)

    if offenders:
        raise ThresholdError("gradient check failed for: " + "; ".join(offenders))
    console.print("[green]all gradient checks passed[/green]")


@click.command("bench")
@common_options
@click.option("--size", "sizes", type=click.IntRange(min=1), multiple=True, help="Square extent; repeatable.")
@click.option("--full-max-size", type=click.IntRange(min=1), default=None, help="Largest size run with full attention.")
@click.option("--channels", type=click.IntRange(min=1), default=None)
@click.option("--repeats", type=click.IntRange(min=1), default=None)
@click.option(
    "--slope-tolerance",
    type=click.FloatRange(min=0.0, min_open=True),
    default=None,
    help="Allowed distance of each time slope from its exponent.",
)
@click.option("--no-enforce-slopes", is_flag=True, help="Report slopes without failing on them.")
@handle_errors
def bench(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    sizes: Tuple[int, ...],
    full_max_size: Optional[int],
    channels: Optional[int],
    repeats: Optional[int],
    slope_tolerance: Optional[float],
    no_enforce_slopes: bool,
):
    """Axial versus full attention: multiply counts, wall-clock and log-log slopes."""
    config = prepare_run(
        "bench",
        config_path,
        seed,
        out,
        force,
        overrides={
            "bench": {
                "sizes": list(sizes) or None,
                "full_max_size": full_max_size,
                "channels": channels,
                "repeats": repeats,
                "slope_tolerance": slope_tolerance,
                "enforce_slopes": False if no_enforce_slopes else None,
            }
        },
    )
    rows = run_attention_bench(config.bench, seed=config.seed, progress=progress_enabled())
    out_dir = Path(config.out)
    frame = pd.DataFrame.from_records([row.to_dict() for row in rows])
    frame.to_csv(out_dir / "bench.csv", index=False)

    slopes = summarize_slopes(rows, config.bench.slope_tolerance)
    ratios = {
        str(size): count_attention_flops(size, size, config.bench.channels, "full")
        / count_attention_flops(size, size, config.bench.channels, "axial")
        for size in config.bench.sizes
    }
    (out_dir / "bench_summary.json").write_text(
        json.dumps({"slopes": slopes, "full_over_axial_flops": ratios}, indent=2) + "\n"
    )

    table = Table(title="Attention scaling")
    table.add_column("mode", style="cyan")
    table.add_column("size", justify="right")
    table.add_column("MACs (formula)", justify="right")
    table.add_column("MACs (measured)", justify="right")
    table.add_column("ms", justify="right")
    for row in rows:
        table.add_row(
            row.mode,
            f"{row.size}x{row.size}",
            str(row.macs_formula),
            str(row.macs_measured),
            f"{row.seconds * 1000:.2f}",
            style=None if row.macs_formula == row.macs_measured else "bold red",
        )
    console.print(table)
    for mode, fit in slopes.items():
        console.print(
            f"{mode}: time slope {fit['time_slope']:.2f}, MAC slope {fit['macs_slope']:.2f} "
            f"(theoretical {fit['theoretical']:.2f}) against token count"
        )
    for size, ratio in ratios.items():
        console.print(f"full/axial flops at {size}x{size}: {ratio:g}x")

    off = [mode for mode, fit in slopes.items() if fit["within_tolerance"] is False]
    if off:
        message = "; ".join(
            f"{mode} time slope {slopes[mode]['time_slope']:.2f} outside {slopes[mode]['theoretical']:.2f}"
            f" +/- {config.bench.slope_tolerance:g}"
            for mode in off
        )
        if config.bench.enforce_slopes:
            raise ThresholdError(message)
        logger.warning(message)
