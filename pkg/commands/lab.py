"""Single-run experiment commands: simulate, sigma, tgcc, beam, observe, fit."""
from __future__ import annotations

import json
from typing import Optional

import click

from services.experiment_service import ExperimentConfig, RunResult, run


def experiment_options(func):
    """--config/--out/--seed/--threads shared by every experiment command."""
    func = click.option("--threads", type=int, default=None, help="Worker threads for geodesic sampling and beam studies (default LAB_THREADS).")(func)
    func = click.option("--seed", type=int, default=None, help="Seed for random initial data.")(func)
    func = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                        help="YAML experiment file.")(func)
    return func


def load_config(kind: str, config_path: str, out: Optional[str], seed: Optional[int]) -> ExperimentConfig:
    return ExperimentConfig.from_yaml(config_path, kind).with_overrides(out, seed)


def echo_result(result: RunResult) -> None:
    click.echo(f"{result.status}: {result.output_dir} ({result.wall_time:.2f}s)")
    click.echo(json.dumps(result.report, indent=2, sort_keys=True, default=str))


def _make_command(kind: str, help_text: str) -> click.Command:
    @click.command(kind, help=help_text)
    @experiment_options
    def command(config_path: str, out: Optional[str], seed: Optional[int], threads: Optional[int]):
        cfg = load_config(kind, config_path, out, seed)
        echo_result(run(cfg, threads))

    return command


simulate = _make_command("simulate", "Evolve the damped wave and write its energy trace.")
sigma = _make_command("sigma", "Minimal geodesic damping average Sigma(t) over sampled geodesics.")
tgcc = _make_command("tgcc", "Check the time-dependent geometric control condition and L(T).")
beam = _make_command("beam", "Gaussian beam residual, energy or beam-versus-solver studies.")
observe = _make_command("observe", "Observability ratios, sandwich, short-time and decay bookkeeping.")
fit = _make_command("fit", "Fit decay-rate models to an energy trace.")

lab_commands = (simulate, sigma, tgcc, beam, observe, fit)
