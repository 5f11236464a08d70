"""Photometric stereo depth refinement command-line factory."""

from __future__ import annotations

import sys
from typing import Any, List, Optional

import click

from .config import default_threads, load_environment
from .logging import LEVEL_NAMES, configure_logging, set_level
from .commands import classic, diag, evaluate, refine, synth
from .commands.common import EXIT_INPUT_ERROR


class ToolkitGroup(click.Group):
    """Root group reporting usage problems with the input-error exit code."""

    def main(
        self,
        args: Optional[List[str]] = None,
        prog_name: Optional[str] = None,
        complete_var: Optional[str] = None,
        standalone_mode: bool = True,
        **extra: Any,
    ) -> Any:
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, False, **extra)
        try:
            result = super().main(args, prog_name, complete_var, False, **extra)
        except click.UsageError as error:
            error.show()
            sys.exit(EXIT_INPUT_ERROR)
        except click.ClickException as error:
            error.show()
            sys.exit(error.exit_code)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_INPUT_ERROR)
        sys.exit(result if isinstance(result, int) else 0)


def create_cli() -> click.Group:
    """Create and configure the command-line application."""
    load_environment()
    configure_logging()

    @click.group(cls=ToolkitGroup, context_settings={"help_option_names": ["-h", "--help"]})
    @click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=default_threads(),
        show_default=True,
        help="Worker threads for sampling and sweep experiments.",
    )
    @click.option(
        "--log-level",
        type=click.Choice(LEVEL_NAMES, case_sensitive=False),
        default=None,
        help="Override LOG_LEVEL for this run.",
    )
    @click.pass_context
    def cli(ctx: click.Context, threads: int, log_level: Optional[str]) -> None:
        """Depth from photometric stereo images with inertial proximal refinement."""
        if log_level:
            set_level(log_level)
        ctx.ensure_object(dict)
        ctx.obj["threads"] = threads

    cli.add_command(synth.command)
    cli.add_command(classic.command)
    cli.add_command(refine.command)
    cli.add_command(evaluate.command)
    cli.add_command(diag.group)

    return cli


def main() -> None:
    create_cli().main(prog_name="ipiano-ps")


__all__ = ["ToolkitGroup", "create_cli", "main"]
