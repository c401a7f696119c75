"""Click subcommands of the ``waunet`` CLI."""

from src.commands.check_commands import bench, gradcheck
from src.commands.data_commands import gen
from src.commands.train_commands import eval_command, predict, train

__all__ = ["bench", "gradcheck", "gen", "eval_command", "predict", "train"]
