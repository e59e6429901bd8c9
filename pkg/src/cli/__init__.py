"""Command-line subcommands and run configuration."""

from src.cli.commands import cmd_corpus, cmd_enumerate, cmd_eval, cmd_oracle, cmd_sample
from src.cli.run_config import METHODS, RunConfig, build_run_config

__all__ = [
    "cmd_corpus",
    "cmd_enumerate",
    "cmd_eval",
    "cmd_oracle",
    "cmd_sample",
    "METHODS",
    "RunConfig",
    "build_run_config",
]
