#!/usr/bin/env python

"""
Run IRS beamforming experiments from sectioned YAML configuration files.

Each config file holds the scenario sections (system, geometry, solver), the top-level seed and an
experiment section describing the sweep. Results are written as CSV files together with plot-ready
series files.

Basic usage:
    irs_experiments.py run configs/power_sweep.yaml
    irs_experiments.py convergence configs/convergence.yaml --trials 5
    irs_experiments.py compare-baseline configs/baseline_compare.yaml --workers 4
    irs_experiments.py validate-config configs/irs_count_sweep.yaml

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime failures.
"""

import math
from pathlib import Path
from typing import Any

import typer
from rich.console import Console
from rich.table import Table

from irs_beamforming.config import config_table, load_yaml_sections
from irs_beamforming.errors import ConfigValidationError
from irs_beamforming.experiments import (
    ExperimentKind,
    ExperimentSpec,
    ResultRecord,
    parse_experiment,
    run_experiment,
    summarize,
)

CONFIG_ERROR = 1
RUNTIME_ERROR = 2

console = Console(no_color=True)
app = typer.Typer(
    pretty_exceptions_enable=False,
    no_args_is_help=True,
    help="Run seeded IRS beamforming experiments (power, IRS count and IRS size sweeps, convergence traces, "
    "baseline comparison) from YAML configuration files.",
)


def _load_spec(  # noqa: PLR0913
    config_path: Path,
    seed: int | None,
    output_dir: Path | None,
    trials: int | None,
    workers: int | None,
    kind: ExperimentKind | None = None,
) -> ExperimentSpec:
    """Load a config file and apply the command-line overrides, exiting with code 1 on invalid input."""
    try:
        data: dict[str, Any] = load_yaml_sections(config_path)
        experiment = dict(data.get("experiment") or {})
        overrides = {"trials": trials, "workers": workers, "kind": kind}
        experiment.update({key: value for key, value in overrides.items() if value is not None})
        data["experiment"] = experiment
        if seed is not None:
            data["seed"] = seed
        return parse_experiment(data, output_dir)
    except ConfigValidationError as e:
        typer.echo(f"Error: Invalid configuration in {config_path}:")
        for violation in e.violations:
            typer.echo(f"  - {violation}")
        raise typer.Exit(code=CONFIG_ERROR) from e


def _summary_table(spec: ExperimentSpec, records: list[ResultRecord]) -> Table:
    table = Table(title=f"📊 {spec.experiment_id}", show_header=True, header_style="bold green")
    for column in ("series", "x", "trials", "failed", "mean", "std", "baseline mean"):
        table.add_column(column, style="bold cyan" if column == "mean" else "bold white")
    for row in summarize(records).itertuples(index=False):
        baseline = "-" if math.isnan(row.baseline_mean) else f"{row.baseline_mean:.4f}"
        table.add_row(
            row.experiment,
            f"{row.x:g}",
            str(row.trials),
            str(row.failed),
            f"{row.objective_mean:.4f}",
            f"{row.objective_std:.4f}",
            baseline,
        )
    return table


def _run(spec: ExperimentSpec, no_progress: bool) -> None:
    console.print(config_table(spec, title="⚙️ Experiment Configuration"))
    try:
        records = run_experiment(spec, show_progress=not no_progress)
    except ConfigValidationError as e:
        typer.echo("Error: Invalid sweep configuration:")
        for violation in e.violations:
            typer.echo(f"  - {violation}")
        raise typer.Exit(code=CONFIG_ERROR) from e
    except Exception as e:
        typer.echo(f"Error: Experiment failed: {e}")
        raise typer.Exit(code=RUNTIME_ERROR) from e
    console.print(_summary_table(spec, records))


ConfigArgument = typer.Argument(..., help="Path to YAML configuration file")
SeedOption = typer.Option(None, "--seed", help="Override the base seed")
OutputDirOption = typer.Option(
    None,
    "--output-dir",
    envvar="IRS_OUTPUT_DIR",
    help="Override the output directory (also read from IRS_OUTPUT_DIR)",
)
TrialsOption = typer.Option(None, "--trials", help="Override the number of trials per grid point", min=1)
WorkersOption = typer.Option(None, "--workers", help="Number of worker processes", min=1)
NoProgressOption = typer.Option(False, "--no-progress", help="Disable the progress bar")


@app.command()
def run(  # noqa: PLR0913
    config_path: Path = ConfigArgument,
    seed: int | None = SeedOption,
    output_dir: Path | None = OutputDirOption,
    trials: int | None = TrialsOption,
    workers: int | None = WorkersOption,
    no_progress: bool = NoProgressOption,
) -> None:
    """Run the sweep described by the experiment section of the config file."""
    _run(_load_spec(config_path, seed, output_dir, trials, workers), no_progress)


@app.command()
def convergence(  # noqa: PLR0913
    config_path: Path = ConfigArgument,
    seed: int | None = SeedOption,
    output_dir: Path | None = OutputDirOption,
    trials: int | None = TrialsOption,
    workers: int | None = WorkersOption,
    no_progress: bool = NoProgressOption,
) -> None:
    """Record per-iteration objective traces; the experiment grid lists the numbers of users."""
    _run(_load_spec(config_path, seed, output_dir, trials, workers, kind="convergence_trace"), no_progress)


@app.command("compare-baseline")
def compare_baseline(  # noqa: PLR0913
    config_path: Path = ConfigArgument,
    seed: int | None = SeedOption,
    output_dir: Path | None = OutputDirOption,
    trials: int | None = TrialsOption,
    workers: int | None = WorkersOption,
    no_progress: bool = NoProgressOption,
) -> None:
    """Compare the alternating solver with the random-beamforming baseline over IRS sizes."""
    _run(_load_spec(config_path, seed, output_dir, trials, workers, kind="baseline_compare"), no_progress)


@app.command("validate-config")
def validate_config(config_path: Path = ConfigArgument) -> None:
    """Check a config file and print the resolved configuration."""
    spec = _load_spec(config_path, seed=None, output_dir=None, trials=None, workers=None)
    console.print(config_table(spec, title="⚙️ Experiment Configuration"))
    typer.echo(f"Configuration {config_path} is valid.")


if __name__ == "__main__":
    app()
