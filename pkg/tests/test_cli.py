import pandas as pd
import pytest
from typer.testing import CliRunner

import irs_beamforming.experiments as experiments_module
from irs_beamforming.experiments import RESULT_COLUMNS
from scripts.irs_experiments import app

runner = CliRunner()

SMALL_CONFIG = """\
seed: 3
system:
  n_bs_antennas: 4
  irs_rows: 2
  irs_cols: 2
  n_irs: 1
  n_users: 2
experiment:
  kind: power_sweep
  grid: {grid}
  trials: 1
  record_wall_time: false
"""


@pytest.fixture
def write_config(tmp_path):
    def write(grid: str = "[10, 20]", extra: str = "") -> str:
        path = tmp_path / "experiment.yaml"
        path.write_text(SMALL_CONFIG.format(grid=grid) + extra)
        return str(path)

    return write


def test_validate_config(write_config) -> None:
    path = write_config()
    result = runner.invoke(app, ["validate-config", path])
    assert result.exit_code == 0, result.output
    assert f"Configuration {path} is valid." in result.output


def test_validate_shipped_config(configs_dir) -> None:
    result = runner.invoke(app, ["validate-config", str(configs_dir / "power_sweep.yaml")])
    assert result.exit_code == 0, result.output


def test_invalid_config_exits_with_code_one(write_config) -> None:
    path = write_config(extra="solver:\n  theta_tolerance: -1.0\n  unknown_option: 3\n")
    result = runner.invoke(app, ["validate-config", path])
    assert result.exit_code == 1
    assert "Invalid configuration" in result.output
    assert "solver.theta_tolerance" in result.output
    assert "solver.unknown_option" in result.output


def test_missing_config_exits_with_code_one(tmp_path) -> None:
    result = runner.invoke(app, ["run", str(tmp_path / "missing.yaml"), "--no-progress"])
    assert result.exit_code == 1
    assert "does not exist" in result.output


def test_run_writes_results(write_config, tmp_path) -> None:
    out = tmp_path / "out"
    result = runner.invoke(app, ["run", write_config(), "--output-dir", str(out), "--no-progress", "--trials", "2"])

    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out / "results.csv")
    assert list(frame.columns) == RESULT_COLUMNS
    assert frame["x"].tolist() == [10.0, 10.0, 20.0, 20.0]
    assert frame["objective"].notna().all()
    assert (frame["outer_iters"] >= 1).all()
    assert (out / "summary.csv").exists()


def test_output_dir_from_environment(write_config, tmp_path) -> None:
    out = tmp_path / "from_env"
    result = runner.invoke(app, ["run", write_config(grid="[10]"), "--no-progress"], env={"IRS_OUTPUT_DIR": str(out)})

    assert result.exit_code == 0, result.output
    assert (out / "results.csv").exists()


def test_seed_override_changes_trial_seeds(write_config, tmp_path) -> None:
    path = write_config(grid="[10]")
    runner.invoke(app, ["run", path, "--output-dir", str(tmp_path / "a"), "--no-progress"])
    runner.invoke(app, ["run", path, "--output-dir", str(tmp_path / "b"), "--no-progress", "--seed", "99"])

    first = pd.read_csv(tmp_path / "a" / "results.csv")["seed"].tolist()
    second = pd.read_csv(tmp_path / "b" / "results.csv")["seed"].tolist()
    assert first != second


def test_convergence_command(write_config, tmp_path) -> None:
    out = tmp_path / "convergence"
    result = runner.invoke(app, ["convergence", write_config(grid="[1, 2]"), "--output-dir", str(out), "--no-progress"])

    assert result.exit_code == 0, result.output
    assert (out / "traces.csv").exists()
    assert pd.read_csv(out / "results.csv")["objective"].notna().all()
    assert (out / "plots" / "convergence_trace_k2_trace.dat").exists()


def test_compare_baseline_command(write_config, tmp_path) -> None:
    out = tmp_path / "baseline"
    args = ["compare-baseline", write_config(grid="[4]"), "--output-dir", str(out), "--no-progress"]
    result = runner.invoke(app, args)

    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out / "results.csv")
    assert frame["baseline"].notna().all()
    assert frame["objective"].notna().all()


def test_indivisible_irs_size_exits_with_code_one(write_config, tmp_path) -> None:
    out = tmp_path / "baseline"
    args = ["compare-baseline", write_config(grid="[5]"), "--output-dir", str(out), "--no-progress"]
    result = runner.invoke(app, args)

    assert result.exit_code == 1
    assert "not a multiple" in result.output


def test_runtime_failure_exits_with_code_two(write_config, tmp_path) -> None:
    blocker = tmp_path / "not_a_directory"
    blocker.write_text("")
    result = runner.invoke(app, ["run", write_config(), "--output-dir", str(blocker), "--no-progress"])

    assert result.exit_code == 2
    assert "Experiment failed" in result.output


def test_sweep_where_every_trial_fails_exits_with_code_two(write_config, tmp_path, monkeypatch) -> None:
    def broken_solve(*_args, **_kwargs):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(experiments_module, "solve", broken_solve)
    result = runner.invoke(app, ["run", write_config(), "--output-dir", str(tmp_path / "out"), "--no-progress"])

    assert result.exit_code == 2
    assert "trials failed" in result.output


@pytest.mark.slow
def test_shipped_config_gives_byte_identical_results(configs_dir, tmp_path) -> None:
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        args = ["convergence", str(configs_dir / "convergence.yaml"), "--output-dir", str(out), "--no-progress"]
        result = runner.invoke(app, [*args, "--trials", "1"])
        assert result.exit_code == 0, result.output
        outputs.append(out)

    assert pd.read_csv(outputs[0] / "results.csv")["objective"].notna().all()
    for name in ("results.csv", "summary.csv", "traces.csv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
