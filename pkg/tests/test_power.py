import cvxpy as cp
import numpy as np
import pytest
from conftest import random_phases, random_unit_rows
from pydantic import ValidationError

import irs_beamforming.power as power_module
from irs_beamforming.errors import PowerSolverError
from irs_beamforming.objective import weighted_sum_rate
from irs_beamforming.power import (
    PowerSubproblem,
    allocate_power_gp,
    allocate_power_pg,
    extract_subproblem,
    kkt_residual,
    power_oracle,
    project_capped_simplex,
    run_power_stage,
)
from irs_beamforming.types import PowerVector


def _subproblem(signal, interference, noise=1.0, budget=1.0, weights=None) -> PowerSubproblem:
    signal = np.asarray(signal, dtype=float)
    return PowerSubproblem(
        signal=signal,
        interference=np.asarray(interference, dtype=float),
        noise=noise,
        weights=np.ones(signal.size) if weights is None else np.asarray(weights, dtype=float),
        budget=budget,
    )


def _random_subproblem(rng: np.random.Generator, n_users: int, coupling: float) -> PowerSubproblem:
    signal = rng.uniform(0.5, 5.0, n_users)
    interference = rng.uniform(0.0, coupling, (n_users, n_users))
    return _subproblem(signal, interference)


def test_subproblem_matches_weighted_sum_rate(small_channels, small_config, rng) -> None:
    theta = random_phases(rng, 8)
    w = random_unit_rows(rng, 2, 4)
    sub = extract_subproblem(theta, w, small_channels, small_config)

    assert sub.interference[0, 0] == 0.0
    assert sub.budget == pytest.approx(small_config.total_power_w)
    for p in (np.array([0.5, 0.5]), np.array([0.9, 0.1]), np.array([1e-6, 0.3])):
        expected = weighted_sum_rate(theta, w, p, small_channels, small_config)
        assert sub.objective(p) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_subproblem_validation() -> None:
    with pytest.raises(ValidationError, match="nonnegative"):
        _subproblem([-1.0, 1.0], np.zeros((2, 2)))
    with pytest.raises(ValidationError, match="square"):
        _subproblem([1.0, 1.0], np.zeros((2, 3)))
    with pytest.raises(ValidationError, match="Noise power"):
        _subproblem([1.0], [[0.0]], noise=0.0)
    with pytest.raises(ValidationError, match="do not agree"):
        _subproblem([1.0, 1.0], np.zeros((3, 3)))

    sub = _subproblem([1.0, 1.0], [[5.0, 1.0], [1.0, 5.0]])
    np.testing.assert_array_equal(np.diag(sub.interference), [0.0, 0.0])


def test_objective_gradient_matches_finite_differences(rng) -> None:
    sub = _random_subproblem(rng, 3, 1.0)
    p = np.array([0.2, 0.3, 0.4])
    h = 1e-6
    numeric = np.array([(sub.objective(p + h * e) - sub.objective(p - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(sub.gradient(p), numeric, rtol=1e-6, atol=1e-8)


def test_objective_is_batched(rng) -> None:
    sub = _random_subproblem(rng, 2, 1.0)
    batch = np.array([[0.2, 0.8], [0.5, 0.5]])
    np.testing.assert_allclose(sub.objective(batch), [sub.objective(batch[0]), sub.objective(batch[1])])


def test_single_user_takes_full_budget() -> None:
    sub = _subproblem([2.0], [[0.0]], budget=3.0)
    for p0 in ([1.0], [3.0]):
        result = allocate_power_gp(sub, np.array(p0))
        np.testing.assert_array_equal(result.p, [3.0])
    np.testing.assert_array_equal(allocate_power_pg(sub, np.array([0.5])).p, [3.0])


def test_symmetric_problem_keeps_equal_split() -> None:
    sub = _subproblem([4.0, 4.0], [[0.0, 0.25], [0.25, 0.0]])
    result = run_power_stage(sub, PowerVector.uniform(2, 1.0), multistart=False)
    np.testing.assert_allclose(result.p.p, [0.5, 0.5], rtol=1e-3)
    assert result.kkt_residual < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_condensation_matches_grid_oracle_for_two_users(seed) -> None:
    rng = np.random.default_rng(seed)
    sub = _random_subproblem(rng, 2, 1.0)

    result = run_power_stage(sub, PowerVector.uniform(2, 1.0), tol=1e-9, max_rounds=200, multistart=True)
    oracle = power_oracle(sub, 200)

    assert result.objective >= sub.objective(oracle.p) - 1e-3
    assert result.p.p.sum() <= 1.0 + 1e-12


def test_condensation_matches_grid_oracle_for_weak_coupling(rng) -> None:
    sub = _random_subproblem(rng, 3, 0.05)
    result = run_power_stage(sub, PowerVector.uniform(3, 1.0), tol=1e-9, max_rounds=200, multistart=True)
    oracle = power_oracle(sub, 30)
    assert result.objective >= sub.objective(oracle.p) - 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_power_stage_never_worse_than_start(seed) -> None:
    rng = np.random.default_rng(100 + seed)
    sub = _random_subproblem(rng, 3, 2.0)
    p0 = rng.dirichlet(np.ones(3)) * 0.8
    result = run_power_stage(sub, p0)

    assert result.objective >= sub.objective(p0)
    assert np.all(result.p.p >= sub.floor)
    assert result.p.p.sum() <= sub.budget * (1.0 + 1e-12)


def test_scaling_gains_and_noise_leaves_allocation_unchanged(rng) -> None:
    sub = _random_subproblem(rng, 2, 1.0)
    scaled = _subproblem(sub.signal * 4.0, sub.interference * 4.0, noise=4.0)

    np.testing.assert_array_equal(power_oracle(sub, 50).p, power_oracle(scaled, 50).p)
    first = run_power_stage(sub, PowerVector.uniform(2, 1.0)).p.p
    second = run_power_stage(scaled, PowerVector.uniform(2, 1.0)).p.p
    np.testing.assert_allclose(first, second, rtol=1e-9)


def test_projected_gradient_is_monotone_and_feasible(rng) -> None:
    sub = _random_subproblem(rng, 3, 1.0)
    p0 = np.array([0.1, 0.1, 0.1])
    p = allocate_power_pg(sub, p0).p

    assert sub.objective(p) >= sub.objective(p0)
    assert p.sum() <= 1.0 + 1e-12
    assert np.all(p > 0.0)


def test_solver_failure_falls_back_to_projected_gradient(monkeypatch, rng) -> None:
    def failing_rounds(*_args, **_kwargs):
        raise PowerSolverError("solver unavailable")

    monkeypatch.setattr(power_module, "_condensation_rounds", failing_rounds)
    sub = _random_subproblem(rng, 2, 1.0)
    p0 = PowerVector.uniform(2, 1.0)

    result = run_power_stage(sub, p0)

    assert result.method == "pg"
    assert result.objective >= sub.objective(p0.p)


def test_solver_error_surfaces_as_power_solver_error(monkeypatch, rng) -> None:
    def failing_solve(*_args, **_kwargs):
        raise cp.error.SolverError("solver unavailable")

    monkeypatch.setattr(cp.Problem, "solve", failing_solve)
    sub = _random_subproblem(rng, 2, 1.0)
    p0 = PowerVector.uniform(2, 1.0)

    with pytest.raises(PowerSolverError, match="could not be solved"):
        power_module._condensation_rounds(sub, p0.p, 1e-6, 10)

    result = run_power_stage(sub, p0, multistart=True)
    assert result.method == "pg"
    assert result.objective >= sub.objective(p0.p)


def test_non_optimal_status_surfaces_as_power_solver_error(monkeypatch, rng) -> None:
    def infeasible_solve(problem, *_args, **_kwargs):
        problem._status = cp.INFEASIBLE

    monkeypatch.setattr(cp.Problem, "solve", infeasible_solve)
    sub = _random_subproblem(rng, 2, 1.0)

    with pytest.raises(PowerSolverError, match="status"):
        power_module._condensation_rounds(sub, np.array([0.5, 0.5]), 1e-6, 10)


def test_invalid_start_is_rejected() -> None:
    sub = _subproblem([1.0, 1.0], np.zeros((2, 2)))
    with pytest.raises(ValueError, match="exceed the budget"):
        run_power_stage(sub, np.array([0.8, 0.8]))
    with pytest.raises(ValueError, match="shape"):
        run_power_stage(sub, np.array([0.5]))
    with pytest.raises(ValueError, match="strictly positive"):
        allocate_power_pg(sub, np.array([0.0, 0.5]))


def test_project_capped_simplex() -> None:
    np.testing.assert_allclose(project_capped_simplex(np.array([0.2, 0.3]), 1.0, 0.01), [0.2, 0.3])
    np.testing.assert_allclose(project_capped_simplex(np.array([0.2, -1.0]), 1.0, 0.01), [0.2, 0.01])
    np.testing.assert_allclose(project_capped_simplex(np.array([2.0, 0.0]), 1.0, 0.01), [0.99, 0.01])
    projected = project_capped_simplex(np.array([0.9, 0.8, 0.7]), 1.0, 0.0)
    np.testing.assert_allclose(projected, [0.9 - 1.4 / 3, 0.8 - 1.4 / 3, 0.7 - 1.4 / 3])


def test_kkt_residual_vanishes_at_single_user_optimum() -> None:
    sub = _subproblem([2.0], [[0.0]], budget=3.0)
    assert kkt_residual(sub, np.array([3.0])) == pytest.approx(0.0, abs=1e-12)
    assert kkt_residual(sub, np.array([1.0])) > 0.1


def test_oracle() -> None:
    single = _subproblem([2.0], [[0.0]], budget=3.0)
    assert power_oracle(single, 10).p == pytest.approx([3.0])

    with pytest.raises(ValueError, match="at most 3"):
        power_oracle(_subproblem(np.ones(4), np.zeros((4, 4))), 10)
    with pytest.raises(ValueError, match="resolution"):
        power_oracle(_subproblem(np.ones(3), np.zeros((3, 3))), 2)

    # With no interference and equal gains the sum-rate favors the equal split
    symmetric = _subproblem([1.0, 1.0], np.zeros((2, 2)))
    np.testing.assert_allclose(power_oracle(symmetric, 10).p, [0.5, 0.5])


def _oracle_case(seed: int) -> tuple[PowerSubproblem, int]:
    rng = np.random.default_rng(1000 + seed)
    n_users = 2 + seed % 2
    coupling = (0.05, 1.0, 5.0)[seed % 3]
    signal = rng.uniform(0.5, 5.0, n_users)
    interference = rng.uniform(0.0, coupling, (n_users, n_users))
    weights = rng.uniform(0.2, 2.0, n_users) if seed % 4 >= 2 else None
    return _subproblem(signal, interference, weights=weights), 200 if n_users == 2 else 60


@pytest.mark.parametrize("seed", range(50))
def test_power_stage_dominates_grid_oracle(seed) -> None:
    sub, resolution = _oracle_case(seed)

    p = allocate_power_gp(sub, PowerVector.uniform(sub.n_users, 1.0), tol=1e-9, max_rounds=200, multistart=True)
    oracle = power_oracle(sub, resolution)

    assert sub.objective(p.p) >= sub.objective(oracle.p) - 1e-3
    assert p.p.sum() <= 1.0 + 1e-12


def test_two_user_start_is_offered_for_three_users() -> None:
    sub = _subproblem([4.0, 4.0, 0.5], [[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [5.0, 5.0, 0.0]])
    starts = power_module._near_vertices(sub)

    assert len(starts) == 4
    np.testing.assert_allclose(starts[-1][:2], [0.495, 0.495])
    assert all(start.sum() == pytest.approx(1.0) for start in starts)
    assert len(power_module._near_vertices(_subproblem([1.0, 1.0], np.zeros((2, 2))))) == 2
