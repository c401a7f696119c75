"""Shared plumbing for every subcommand: common options, config resolution,
output-directory policy and the error-to-exit-code handler."""

import functools
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src.config.run_config import (
    RunConfig,
    format_validation_error,
    load_config_file,
    resolve_run_config,
    write_resolved_config,
)
from src.errors import ConfigurationError, UsageError, WaunetError

console = Console()
error_console = Console(stderr=True)


def common_options(func: Callable) -> Callable:
    """Attach --config, --seed, --out and --force."""
    func = click.option("--force", is_flag=True, default=False, help="Write into a non-empty output directory.")(func)
    func = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(func)
    func = click.option("--seed", type=int, default=None, help="Master seed.")(func)
    func = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="TOML, JSON or YAML config file; flags override it.",
    )(func)
    return func


def handle_errors(func: Callable) -> Callable:
    """Map engine errors onto exit codes: 2 for usage/config, 1 otherwise."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as exc:
            error = ConfigurationError(f"invalid configuration: {format_validation_error(exc)}")
            return _fail(error)
        except WaunetError as exc:
            return _fail(exc)

    return wrapper


def _fail(exc: WaunetError):
    logger.error(f"{type(exc).__name__}: {exc}")
    error_console.print(f"[bold red]error:[/bold red] {exc}", highlight=False)
    raise click.exceptions.Exit(exc.exit_code)


def progress_enabled() -> bool:
    return sys.stderr.isatty()


def prepare_run(
    command: str,
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: Optional[bool],
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Resolve the run config, enforce the output-directory policy and persist it.

    A non-empty output directory is refused unless ``force`` is set.
    """
    file_data = load_config_file(config_path)
    merged_overrides: Dict[str, Any] = {"seed": seed, "out": out, "force": force or None}
    merged_overrides.update(overrides or {})
    if file_data.get("out") is None and out is None:
        raise UsageError("no output directory: pass --out or set 'out' in the config file")
    config = resolve_run_config(command, file_data, merged_overrides)

    out_dir = Path(config.out)
    if out_dir.exists() and not out_dir.is_dir():
        raise UsageError(f"output path {out_dir} exists and is not a directory")
    if out_dir.is_dir() and any(out_dir.iterdir()) and not config.force:
        raise UsageError(f"output directory {out_dir} is not empty; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_resolved_config(config, str(out_dir))
    logger.debug(f"resolved config written to {path}")
    return config


def key_value_table(title: str, rows: Dict[str, Any]) -> Table:
    table = Table(title=title, show_header=False)
    table.add_column("key", style="cyan")
    table.add_column("value")
    for key, value in rows.items():
        table.add_row(key, str(value))
    return table
