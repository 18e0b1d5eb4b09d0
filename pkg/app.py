"""
Damped-Wave Laboratory

Numerical experiments on damped waves over flat tori: simulation, geodesic
functionals, Gaussian beams, observability and decay-rate fits.

Quick Start:
1. Install dependencies: pip install -r requirements.txt
2. Initialize the run ledger: python run.py initdb
3. Run an experiment: python run.py simulate --config configs/simulate_constant.yaml
4. Reproduce a named result: python run.py reproduce energy-conservation
5. List what was run: python run.py runs
"""
from __future__ import annotations

import logging
import sys

import click

from config import Config
from errors import LabError
from models import init_db

# Import command groups
from commands.experiments import experiments_commands
from commands.lab import lab_commands


class LabGroup(click.Group):
    """Top-level group turning LabError into a one-line diagnostic and its exit code."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except LabError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)


def create_cli() -> click.Group:
    logging.basicConfig(
        level=getattr(logging, str(Config.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    @click.group(cls=LabGroup)
    @click.version_option(Config.CODE_VERSION)
    def cli():
        """Damped-wave stabilization laboratory."""

    # Register command groups
    for command in (*lab_commands, *experiments_commands):
        cli.add_command(command)

    @cli.command("initdb")
    def initdb_command():
        """Initialize the run ledger."""
        init_db()
        click.echo(f"Ledger initialized at {Config.DATABASE_URL}.")

    return cli
