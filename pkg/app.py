"""Compatibility module exposing the command-line application."""

from __future__ import annotations

from ipiano_ps import create_cli

cli = create_cli()


if __name__ == "__main__":
    cli.main(prog_name="ipiano-ps")
