"""Seeded experiment sweeps: run the solver over a grid of scenarios and persist tabular results.

Every (grid point, trial) pair gets its own seed derived from the base seed, so each trial is reproducible
on its own and trials can run in any order or in parallel. Output files are always written in (series,
grid point, trial) order:

- ``results.csv``: one row per trial (``experiment,x,seed,objective,baseline,outer_iters,ms``)
- ``summary.csv``: mean and standard deviation per grid point
- ``traces.csv``: objective after every outer iteration of every trial
"""

import math
import time
from collections.abc import Mapping
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn, TimeRemainingColumn

from irs_beamforming import logger
from irs_beamforming.channel import sample_scenario
from irs_beamforming.config import SystemConfig, format_errors, load_yaml_sections, validate_config
from irs_beamforming.driver import init_point, random_baseline, solve
from irs_beamforming.errors import ConfigValidationError, ExperimentError

ExperimentKind = Literal["power_sweep", "irs_count_sweep", "irs_size_sweep", "convergence_trace", "baseline_compare"]

RESULT_COLUMNS = ["experiment", "x", "seed", "objective", "baseline", "outer_iters", "ms"]
TRACE_COLUMNS = ["experiment", "x", "seed", "iteration", "objective"]
FLOAT_FORMAT = "%.17g"
INTEGER_KINDS = ("irs_count_sweep", "irs_size_sweep", "convergence_trace", "baseline_compare")


class ExperimentSpec(BaseModel):
    """One sweep: what is varied, over which values, how often, and where results go"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ExperimentKind = Field(
        description="Swept quantity: transmit power (dBm), number of IRSs, elements per IRS, "
        "number of users (convergence traces) or elements per IRS against the random baseline",
    )

    grid: list[float] = Field(
        description="Sweep values",
        min_length=1,
    )

    trials: int = Field(
        default=1,
        description="Independent channel realizations per grid point",
        ge=1,
    )

    base: SystemConfig = Field(
        default_factory=SystemConfig,
        description="Scenario and solver configuration the sweep values are applied to",
    )

    output_dir: Path = Field(
        default=Path("outputs"),
        description="Directory for results.csv, summary.csv, traces.csv and plot data",
    )

    name: str | None = Field(
        default=None,
        description="Experiment id written to the results file. Defaults to the experiment kind.",
    )

    include_baseline: bool = Field(
        default=False,
        description="Also evaluate the random-beamforming baseline (always on for baseline_compare)",
    )

    baseline_draws: int = Field(
        default=50,
        description="Random candidates drawn by the baseline",
        ge=1,
    )

    user_counts: list[int] | None = Field(
        default=None,
        description="Run one series per number of users K. If None, the base config's K is used.",
    )

    workers: int = Field(
        default=1,
        description="Worker processes running trials in parallel",
        ge=1,
    )

    record_wall_time: bool = Field(
        default=False,
        description="Record per-trial wall time in the ms column. If False, ms is 0 and results are reproducible "
        "byte for byte.",
    )

    @field_validator("user_counts")
    @classmethod
    def validate_user_counts(cls, v: list[int] | None) -> list[int] | None:
        if v is not None and (not v or any(k < 1 for k in v)):
            raise ValueError("user_counts must be a non-empty list of positive integers")
        return v

    @model_validator(mode="after")
    def validate_grid(self) -> "ExperimentSpec":
        """Integer-valued sweeps must have integral grid values, and convergence series come from the grid."""
        if self.kind in INTEGER_KINDS and any(x != int(x) or x < 1 for x in self.grid):
            raise ValueError(f"{self.kind} grid values must be positive integers")
        if self.kind == "convergence_trace" and self.user_counts is not None:
            raise ValueError("convergence_trace sweeps the number of users through its grid; drop user_counts")
        return self

    @property
    def experiment_id(self) -> str:
        return self.name or self.kind

    @property
    def with_baseline(self) -> bool:
        return self.include_baseline or self.kind == "baseline_compare"

    def series(self) -> list[tuple[str, int | None]]:
        """(series id, number of users) pairs; a None user count keeps the base config's K."""
        if self.user_counts is None:
            return [(self.experiment_id, None)]
        return [(f"{self.experiment_id}_k{k}", k) for k in self.user_counts]


class ResultRecord(BaseModel):
    """One trial. A failed trial has a NaN objective and zero outer iterations."""

    model_config = ConfigDict(frozen=True)

    experiment: str
    x: float
    seed: int
    objective: float
    baseline: float | None = None
    outer_iters: int
    ms: float = 0.0

    @model_validator(mode="after")
    def validate_values(self) -> "ResultRecord":
        """Successful trials have a nonnegative objective and at least one outer iteration."""
        if not self.failed:
            if self.objective < 0.0:
                raise ValueError(f"objective must be nonnegative, got {self.objective}")
            if self.outer_iters < 1:
                raise ValueError(f"outer_iters must be at least 1, got {self.outer_iters}")
        return self

    @property
    def failed(self) -> bool:
        return math.isnan(self.objective)


class TrialJob(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment: str
    x: float
    seed: int
    config: SystemConfig
    with_baseline: bool
    baseline_draws: int
    record_wall_time: bool


class TrialOutcome(BaseModel):
    record: ResultRecord
    trace: list[float] = Field(default_factory=list)
    error: str | None = None


def trial_seed(base_seed: int, point: int, trial: int) -> int:
    """Seed of one trial, derived from the base seed, the grid point index and the trial index."""
    state = np.random.SeedSequence([base_seed, point, trial]).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def config_for_point(spec: ExperimentSpec, x: float, n_users: int | None = None) -> SystemConfig:
    """Apply one sweep value (and optionally a user count) to the base configuration.

    Raises:
        ConfigValidationError: If the resulting configuration is invalid, e.g. an IRS size that is not a
            multiple of ``irs_cols``.
    """
    system: dict[str, Any] = {}
    if spec.kind == "power_sweep":
        system["total_power_dbm"] = float(x)
    elif spec.kind == "irs_count_sweep":
        system["n_irs"] = int(x)
    elif spec.kind in ("irs_size_sweep", "baseline_compare"):
        n_elements, irs_cols = int(x), spec.base.system.irs_cols
        if n_elements % irs_cols:
            raise ConfigValidationError(
                [f"experiment.grid: {n_elements} elements per IRS is not a multiple of irs_cols ({irs_cols})"]
            )
        system["irs_rows"] = n_elements // irs_cols
    elif spec.kind == "convergence_trace":
        system["n_users"] = int(x)

    if n_users is not None:
        system["n_users"] = n_users
    weights = spec.base.system.user_weights
    if weights is not None and system.get("n_users", len(weights)) != len(weights):
        logger.debug(f"Dropping user_weights for K={system['n_users']}; every user is weighted 1")
        system["user_weights"] = None
    return spec.base.updated(system=system)


def run_trial(job: TrialJob) -> TrialOutcome:
    """Sample a scenario, solve it (and the baseline) and summarize it as a result record.

    Exceptions are caught and turned into a failed record so one bad trial does not abort a sweep.
    """
    start = time.perf_counter()
    try:
        rng = np.random.default_rng(job.seed)
        _, channels = sample_scenario(job.config, rng)
        init = init_point(job.config, channels, rng)
        solution = solve(job.config, channels, init)
        baseline = None
        if job.with_baseline:
            baseline = random_baseline(job.config, channels, job.baseline_draws, rng).objective
    except Exception as e:
        logger.warning(f"Trial {job.experiment} x={job.x:g} seed={job.seed} failed: {e}")
        record = ResultRecord(experiment=job.experiment, x=job.x, seed=job.seed, objective=math.nan, outer_iters=0)
        return TrialOutcome(record=record, error=str(e))

    ms = (time.perf_counter() - start) * 1000.0 if job.record_wall_time else 0.0
    record = ResultRecord(
        experiment=job.experiment,
        x=job.x,
        seed=job.seed,
        objective=solution.objective,
        baseline=baseline,
        outer_iters=solution.outer_iterations,
        ms=ms,
    )
    return TrialOutcome(record=record, trace=solution.objectives.tolist())


def build_jobs(spec: ExperimentSpec) -> list[TrialJob]:
    """All trials of a sweep in (series, grid point, trial) order."""
    jobs = []
    for series_id, n_users in spec.series():
        for point, x in enumerate(spec.grid):
            config = config_for_point(spec, x, n_users)
            for trial in range(spec.trials):
                seed = trial_seed(spec.base.seed, point, trial)
                jobs.append(
                    TrialJob(
                        experiment=series_id,
                        x=float(x),
                        seed=seed,
                        config=config.updated(seed=seed),
                        with_baseline=spec.with_baseline,
                        baseline_draws=spec.baseline_draws,
                        record_wall_time=spec.record_wall_time,
                    )
                )
    return jobs


def run_experiment(spec: ExperimentSpec, show_progress: bool = True) -> list[ResultRecord]:
    """Run every trial of ``spec`` and write results, summary, traces and plot data to ``spec.output_dir``.

    Failed trials are recorded and the sweep continues.

    Raises:
        ExperimentError: If every trial failed. The output files are written before raising.
    """
    output_dir = Path(spec.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    jobs = build_jobs(spec)
    logger.info(f"🧪 Running {spec.experiment_id}: {len(jobs)} trials with {spec.workers} worker(s)")

    progress = Progress(
        TextColumn("Trials"),
        MofNCompleteColumn(),
        BarColumn(bar_width=40, style="blue"),
        TimeElapsedColumn(),
        TextColumn("ETA:"),
        TimeRemainingColumn(compact=True),
        disable=not show_progress,
    )

    outcomes: list[TrialOutcome] = []
    with progress:
        task = progress.add_task("Trials", total=len(jobs))
        if spec.workers > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as executor:
                for outcome in executor.map(run_trial, jobs):
                    outcomes.append(outcome)
                    progress.advance(task)
        else:
            for job in jobs:
                outcomes.append(run_trial(job))
                progress.advance(task)

    records = [outcome.record for outcome in outcomes]
    traces = traces_frame(outcomes)
    write_results(records, output_dir / "results.csv")
    summarize(records).to_csv(output_dir / "summary.csv", index=False, float_format=FLOAT_FORMAT)
    traces.to_csv(output_dir / "traces.csv", index=False, float_format=FLOAT_FORMAT)

    successful = [record for record in records if not record.failed]
    if successful:
        emit_plot_data(successful, spec.kind, output_dir / "plots", traces=traces)

    n_failed = len(records) - len(successful)
    if n_failed:
        logger.warning(f"{n_failed} of {len(records)} trials failed")
    logger.info(f"💾 Results saved in {output_dir}")
    if not successful:
        first_error = next((outcome.error for outcome in outcomes if outcome.error is not None), "unknown")
        raise ExperimentError(f"All {len(records)} trials failed; first error: {first_error}")
    return records


def records_frame(records: list[ResultRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([record.model_dump() for record in records], columns=RESULT_COLUMNS)
    dtypes = {"x": float, "seed": "int64", "objective": float, "baseline": float, "outer_iters": "int64", "ms": float}
    return frame.astype(dtypes)


def write_results(records: list[ResultRecord], path: str | Path) -> None:
    """Write records as comma-separated values with the fixed results header."""
    records_frame(records).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_results(path: str | Path) -> list[ResultRecord]:
    """Parse a results file written by ``write_results`` back into records."""
    frame = pd.read_csv(path, dtype={"experiment": str}, float_precision="round_trip")
    if list(frame.columns) != RESULT_COLUMNS:
        raise ValueError(f"{path} does not have the results header {','.join(RESULT_COLUMNS)}")

    records = []
    for row in frame.itertuples(index=False):
        records.append(
            ResultRecord(
                experiment=row.experiment,
                x=float(row.x),
                seed=int(row.seed),
                objective=float(row.objective),
                baseline=None if pd.isna(row.baseline) else float(row.baseline),
                outer_iters=int(row.outer_iters),
                ms=float(row.ms),
            )
        )
    return records


def summarize(records: list[ResultRecord]) -> pd.DataFrame:
    """Per (experiment, x): number of successful trials, failures and population mean/std of both objectives."""
    frame = records_frame(records)
    frame["failed"] = frame["objective"].isna()
    grouped = frame.groupby(["experiment", "x"], sort=False)
    summary = grouped.agg(
        trials=("objective", "count"),
        failed=("failed", "sum"),
        objective_mean=("objective", "mean"),
        objective_std=("objective", lambda s: s.std(ddof=0)),
        baseline_mean=("baseline", "mean"),
        baseline_std=("baseline", lambda s: s.std(ddof=0)),
    )
    return summary.reset_index()


def traces_frame(outcomes: list[TrialOutcome]) -> pd.DataFrame:
    rows = [
        (outcome.record.experiment, outcome.record.x, outcome.record.seed, iteration, value)
        for outcome in outcomes
        for iteration, value in enumerate(outcome.trace)
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def _series_file(path: Path, x: np.ndarray, mean: np.ndarray, std: np.ndarray, label: str) -> None:
    lines = [f"# {label}", "# x mean std"]
    lines.extend(f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in zip(x, mean, std, strict=True))
    path.write_text("\n".join(lines) + "\n")


PLOT_SCRIPT = """\
# Plots the series files in this directory; requires matplotlib.
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

FILES = {files}
XLABEL = {xlabel!r}

fig, ax = plt.subplots()
for name in FILES:
    x, mean, std = np.loadtxt(Path(__file__).parent / name, unpack=True, ndmin=2)
    ax.errorbar(x, mean, yerr=std, marker="o", capsize=3, label=name.removesuffix(".dat"))
ax.set_xlabel(XLABEL)
ax.set_ylabel("Weighted sum-rate (bits/s/Hz)")
ax.grid(True)
ax.legend()
fig.savefig(Path(__file__).with_suffix(".pdf"))
"""

X_LABELS: dict[str, str] = {
    "power_sweep": "Transmit power P (dBm)",
    "irs_count_sweep": "Number of IRSs L",
    "irs_size_sweep": "Elements per IRS M",
    "convergence_trace": "Outer iteration",
    "baseline_compare": "Elements per IRS M",
}


def emit_plot_data(
    records: list[ResultRecord],
    kind: ExperimentKind,
    out_dir: str | Path,
    traces: pd.DataFrame | None = None,
) -> list[Path]:
    """Write one ``x mean std`` file per series and a plotting script that reads them.

    Series are the proposed solver per experiment id and, when present, the baseline on the same x values.
    Convergence traces become per-iteration series instead. Re-running on the same records overwrites the
    files with identical content.

    Raises:
        ValueError: If ``records`` is empty.
    """
    if not records:
        raise ValueError("Cannot emit plot data without records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frame = records_frame([record for record in records if not record.failed])
    written = []
    if kind == "convergence_trace" and traces is not None and not traces.empty:
        for (experiment, x), group in traces.groupby(["experiment", "x"], sort=False):
            stats = group.groupby("iteration")["objective"].agg(mean="mean", std=lambda s: s.std(ddof=0))
            path = out_dir / f"{experiment}_k{int(x)}_trace.dat"
            _series_file(path, stats.index.to_numpy(), stats["mean"].to_numpy(), stats["std"].to_numpy(), path.stem)
            written.append(path)
    else:
        for experiment, group in frame.groupby("experiment", sort=False):
            stats = group.groupby("x").agg(
                mean=("objective", "mean"),
                std=("objective", lambda s: s.std(ddof=0)),
                baseline_mean=("baseline", "mean"),
                baseline_std=("baseline", lambda s: s.std(ddof=0)),
            )
            x = stats.index.to_numpy()
            path = out_dir / f"{experiment}_proposed.dat"
            _series_file(path, x, stats["mean"].to_numpy(), stats["std"].to_numpy(), path.stem)
            written.append(path)
            if group["baseline"].notna().any():
                path = out_dir / f"{experiment}_baseline.dat"
                _series_file(path, x, stats["baseline_mean"].to_numpy(), stats["baseline_std"].to_numpy(), path.stem)
                written.append(path)

    script = out_dir / "plot.py"
    script.write_text(PLOT_SCRIPT.format(files=[path.name for path in written], xlabel=X_LABELS[kind]))
    return [*written, script]


def parse_experiment(data: Mapping[str, Any], output_dir: str | Path | None = None) -> ExperimentSpec:
    """Build an experiment from a sectioned mapping: ``experiment`` plus the scenario sections.

    Raises:
        ConfigValidationError: With one entry per violated constraint in either part.
    """
    data = dict(data)
    experiment = data.pop("experiment", None)
    if not isinstance(experiment, Mapping):
        raise ConfigValidationError(["experiment: section is missing"])

    base = validate_config(data)
    fields = dict(experiment)
    if output_dir is not None:
        fields["output_dir"] = output_dir
    try:
        return ExperimentSpec.model_validate({**fields, "base": base})
    except ValidationError as e:
        raise ConfigValidationError([f"experiment.{violation}" for violation in format_errors(e)]) from e


def load_experiment_file(path: str | Path, output_dir: str | Path | None = None) -> ExperimentSpec:
    """Load an experiment from a YAML file with ``system``, ``geometry``, ``solver`` and ``experiment`` sections."""
    return parse_experiment(load_yaml_sections(path), output_dir)
