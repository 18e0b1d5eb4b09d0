"""Sweep, reproduction and ledger commands."""
from __future__ import annotations

import json
from typing import Optional

import click

from commands.lab import echo_result
from errors import ConfigError
from models import recent_runs
from services.experiment_service import ExperimentConfig, sweep
from services.reproduce_service import list_experiments, reproduce


@click.command("sweep")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
              help="YAML experiment file with a sweep.parameters grid.")
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Seed for random initial data.")
@click.option("--threads", type=int, default=None, help="Worker processes (default LAB_THREADS).")
def sweep_command(config_path: str, out: Optional[str], seed: Optional[int], threads: Optional[int]):
    """Run the experiment once per point of the parameter grid."""
    cfg = ExperimentConfig.from_yaml(config_path).with_overrides(out, seed)
    if not cfg.section("sweep")["parameters"]:
        raise ConfigError("sweep.parameters", "sweep grid is empty")
    result = sweep(cfg, threads)
    for point in result.points:
        line = f"{point['label']}: {point['status']}"
        if point["message"]:
            line += f" ({point['message']})"
        click.echo(line)
    for name, slope in sorted(result.slopes.items()):
        click.echo(f"log-log slope {name}: {slope:.4g}")
    click.echo(f"{len(result.points) - result.failures}/{len(result.points)} points ok; summary in {result.output_dir}")


@click.command("reproduce")
@click.argument("name")
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--seed", type=int, default=0, help="Seed for random initial data.")
@click.option("--threads", type=int, default=None, help="Worker threads (default LAB_THREADS).")
def reproduce_command(name: str, out: Optional[str], seed: int, threads: Optional[int]):
    """Run a named reproduction experiment and its pass/fail checks."""
    echo_result(reproduce(name, out, seed, threads))


@click.command("list-experiments")
def list_experiments_command():
    """List the named reproduction experiments."""
    for name, description in list_experiments():
        click.echo(f"{name:24s} {description}")


@click.command("runs")
@click.option("--limit", type=int, default=20, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the ledger rows as JSON.")
def runs_command(limit: int, as_json: bool):
    """Show the most recent entries of the run ledger."""
    rows = recent_runs(limit)
    if as_json:
        click.echo(json.dumps(rows, indent=2))
        return
    if not rows:
        click.echo("No runs recorded.")
        return
    for row in rows:
        click.echo(f"{row['id']:5d}  {row['created_at']}  {row['kind']:28s} {row['status']:8s} {row['output_dir']}")


experiments_commands = (sweep_command, reproduce_command, list_experiments_command, runs_command)
