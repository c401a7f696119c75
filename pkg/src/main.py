"""Command-line entry point: ``python -m src.main <subcommand>``."""

from typing import Optional

import click
from loguru import logger

from src.commands import bench, eval_command, gen, gradcheck, predict, train
from src.logging_config import setup_logging


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--log-level", default=None, help="Override WAUNET_LOG_LEVEL for this run.")
def cli(log_level: Optional[str]):
    """WAU-net desk engine: phantom data, training, evaluation and verification."""
    setup_logging(log_level)
    logger.debug("logging configured")


cli.add_command(gen)
cli.add_command(train)
cli.add_command(eval_command)
cli.add_command(predict)
cli.add_command(gradcheck)
cli.add_command(bench)


if __name__ == "__main__":
    cli()
