"""``gen``: phantom dataset generation."""

from typing import Optional

import click
from rich.table import Table

from src.commands.base import common_options, console, handle_errors, prepare_run, progress_enabled
from src.data.dataset import write_dataset


@click.command("gen")
@common_options
@click.option("--cases", type=click.IntRange(min=1), default=None, help="Number of phantom cases.")
@click.option("--size", type=click.IntRange(min=4), default=None, help="Image side length in pixels.")
@click.option("--organs", type=click.IntRange(1, 10), default=None, help="Number of organ classes.")
@click.option("--noise-std", type=click.FloatRange(min=0.0), default=None, help="Gaussian noise level.")
@handle_errors
def gen(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
    cases: Optional[int],
    size: Optional[int],
    organs: Optional[int],
    noise_std: Optional[float],
):
    """Generate a seeded phantom dataset with its train/val/test split."""
    config = prepare_run(
        "gen",
        config_path,
        seed,
        out,
        force,
        overrides={
            "gen": {
                "cases": cases,
                "phantom": {"size": size, "num_organs": organs, "noise_std": noise_std},
            }
        },
    )
    dataset = write_dataset(config.out, config.gen, config.seed, progress=progress_enabled())

    table = Table(title=f"Dataset {config.out}")
    table.add_column("split", style="cyan")
    table.add_column("cases", justify="right")
    for name in ("train", "val", "test"):
        table.add_row(name, str(len(dataset.split(name))))
    table.add_row("total", str(len(dataset)), style="bold")
    console.print(table)
    console.print(f"classes: {', '.join(dataset.class_names)}")
