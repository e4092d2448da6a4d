"""Power allocation for fixed beamformers.

The subproblem maximizes sum_k omega_k log2(1 + a_k p_k / (sum_{i!=k} b_{k,i} p_i + sigma^2)) subject to
sum(p) <= P and p_k >= eps. It is solved by successive condensation: at the current allocation the
total-received-power posynomial of every user is replaced by its best local monomial, which turns the
weighted sum-rate into a geometric program (solved with cvxpy in log-log mode). Every round can only
improve the true objective. Projected gradient ascent is the fallback when the conic solver fails.

All solver work happens in normalized variables q = p / P with gains scaled by P / sigma^2, which leaves
every SINR unchanged.
"""

import operator
from functools import reduce
from itertools import combinations
from typing import Literal

import cvxpy as cp
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from irs_beamforming import logger
from irs_beamforming.config import SystemConfig
from irs_beamforming.errors import PowerSolverError
from irs_beamforming.objective import LN2, beam_gains, effective_channels
from irs_beamforming.types import BeamMatrix, ChannelSet, FrozenArrayModel, PhaseVector, PowerVector

FLOOR_FRACTION = 1e-12
NEAR_VERTEX_SHARE = 0.99
MAX_ORACLE_USERS = 3
ACCEPTED_STATUSES = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


class PowerSubproblem(FrozenArrayModel):
    """Gains, noise, weights and budget of the power-allocation problem for fixed (theta, W).

    Attributes:
        signal: a_k = |v_k^H w_k|^2, shape (K,)
        interference: b_{k,i} = |v_k^H w_i|^2 for i != k and zero on the diagonal, shape (K, K)
        noise: sigma^2 in watts
        weights: omega_k, shape (K,)
        budget: total power P in watts
    """

    signal: np.ndarray
    interference: np.ndarray
    noise: float
    weights: np.ndarray
    budget: float

    @field_validator("signal", "weights", mode="before")
    @classmethod
    def validate_vectors(cls, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float, copy=True)
        if v.ndim != 1 or np.any(v < 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("signal gains and weights must be finite nonnegative vectors")
        v.flags.writeable = False
        return v

    @field_validator("interference", mode="before")
    @classmethod
    def validate_interference(cls, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"interference gains must form a square matrix, got shape {v.shape}")
        if np.any(v < 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("interference gains must be finite and nonnegative")
        np.fill_diagonal(v, 0.0)
        v.flags.writeable = False
        return v

    @model_validator(mode="after")
    def validate_scalars(self) -> "PowerSubproblem":
        """Validate positive noise and budget and consistent sizes."""
        if self.noise <= 0.0:
            raise ValueError(f"Noise power must be positive, got {self.noise}")
        if self.budget <= 0.0:
            raise ValueError(f"Power budget must be positive, got {self.budget}")
        n_users = self.signal.shape[0]
        if self.interference.shape != (n_users, n_users) or self.weights.shape != (n_users,):
            raise ValueError("signal, interference and weights sizes do not agree")
        return self

    @property
    def n_users(self) -> int:
        return self.signal.shape[0]

    @property
    def floor(self) -> float:
        """Smallest admissible per-user power eps = 1e-12 * P."""
        return FLOOR_FRACTION * self.budget

    def objective(self, p: np.ndarray) -> float | np.ndarray:
        """Weighted sum-rate in bits/s/Hz; ``p`` may carry leading batch dimensions."""
        p = np.asarray(p, dtype=float)
        interference = p @ self.interference.T + self.noise
        rates = np.log1p(self.signal * p / interference) / LN2
        value = rates @ self.weights
        return float(value) if np.ndim(value) == 0 else value

    def gradient(self, p: np.ndarray) -> np.ndarray:
        """Gradient of the weighted sum-rate with respect to p."""
        p = np.asarray(p, dtype=float)
        interference = self.interference @ p + self.noise
        total = interference + self.signal * p
        coupling = self.weights * (1.0 / total - 1.0 / interference)
        return (self.weights * self.signal / total + self.interference.T @ coupling) / LN2


class PowerStageResult(BaseModel):
    """Outcome of one power-allocation stage."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p: PowerVector
    objective: float
    rounds: int
    method: Literal["gp", "pg"]
    kkt_residual: float


def extract_subproblem(
    theta: np.ndarray | PhaseVector,
    w: np.ndarray | BeamMatrix,
    channels: ChannelSet,
    cfg: SystemConfig,
) -> PowerSubproblem:
    """Collect the signal and cross gains of every beam at every user for fixed (theta, W)."""
    eff = effective_channels(channels, theta)
    w = w.w if isinstance(w, BeamMatrix) else np.asarray(w, dtype=complex)
    squared = np.abs(beam_gains(eff.vh, w)) ** 2
    return PowerSubproblem(
        signal=np.diag(squared).copy(),
        interference=squared,
        noise=cfg.noise_power_w,
        weights=cfg.weights,
        budget=cfg.total_power_w,
    )


def project_capped_simplex(v: np.ndarray, budget: float, floor: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto {x : x >= floor, sum(x) <= budget}."""
    v = np.asarray(v, dtype=float)
    clipped = np.maximum(v, floor)
    if clipped.sum() <= budget:
        return clipped

    # Project v - floor onto the simplex of mass budget - n*floor, then shift back
    shifted = v - floor
    mass = budget - floor * v.size
    ordered = np.sort(shifted)[::-1]
    cumulative = np.cumsum(ordered) - mass
    ranks = np.arange(1, v.size + 1)
    last = np.flatnonzero(ordered - cumulative / ranks > 0)[-1]
    tau = cumulative[last] / (last + 1)
    return np.maximum(shifted - tau, 0.0) + floor


def _saturate_budget(p: np.ndarray, budget: float) -> np.ndarray:
    """Scale p up to sum exactly to the budget; every SINR is nondecreasing under this scaling."""
    return p / p.sum() * budget


def kkt_residual(sub: PowerSubproblem, p: np.ndarray | PowerVector) -> float:
    """Projected-gradient stationarity measure ||q - Proj(q + grad_q f)||_inf in normalized powers q = p / P."""
    p = p.p if isinstance(p, PowerVector) else np.asarray(p, dtype=float)
    q = p / sub.budget
    grad_q = sub.gradient(p) * sub.budget
    stepped = project_capped_simplex(q + grad_q, 1.0, FLOOR_FRACTION)
    return float(np.max(np.abs(q - stepped)))


def _start_array(sub: PowerSubproblem, p0: PowerVector | np.ndarray) -> np.ndarray:
    p0 = p0.p if isinstance(p0, PowerVector) else np.asarray(p0, dtype=float)
    if p0.shape != (sub.n_users,):
        raise ValueError(f"Initial power vector should have shape ({sub.n_users},), got {p0.shape}")
    if np.any(p0 <= 0.0):
        raise ValueError("Initial powers must be strictly positive")
    if p0.sum() > sub.budget * (1.0 + FLOOR_FRACTION):
        raise ValueError(f"Initial powers exceed the budget {sub.budget:.6e} W")
    return np.maximum(p0, sub.floor)


def allocate_power_pg(
    sub: PowerSubproblem,
    p0: PowerVector | np.ndarray,
    tol: float = 1e-6,
    max_iterations: int = 500,
) -> PowerVector:
    """Projected gradient ascent with backtracking on the capped simplex; the objective never decreases."""
    p, _ = _projected_gradient(sub, _start_array(sub, p0), tol, max_iterations)
    return PowerVector(p=p, budget=sub.budget)


def _projected_gradient(
    sub: PowerSubproblem,
    p: np.ndarray,
    tol: float,
    max_iterations: int,
) -> tuple[np.ndarray, int]:
    q = p / sub.budget
    value = sub.objective(p)
    step = None
    iteration = 0
    for iteration in range(1, max_iterations + 1):  # noqa: B007
        grad_q = sub.gradient(q * sub.budget) * sub.budget
        if step is None:
            step = 1.0 / max(float(np.max(np.abs(grad_q))), np.finfo(float).tiny)

        accepted = False
        for _ in range(60):
            candidate = project_capped_simplex(q + step * grad_q, 1.0, FLOOR_FRACTION)
            candidate_value = sub.objective(candidate * sub.budget)
            if candidate_value >= value + 1e-4 * float(grad_q @ (candidate - q)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

        improvement = candidate_value - value
        q, value = candidate, candidate_value
        step *= 2.0
        if improvement < tol or kkt_residual(sub, q * sub.budget) < 1e-9:
            break

    p = _saturate_budget(q * sub.budget, sub.budget)
    if sub.objective(p) < value:
        p = q * sub.budget
    return p, iteration


def _condensed_problem(
    signal: np.ndarray,
    interference: np.ndarray,
    weights: np.ndarray,
    q_bar: np.ndarray,
) -> tuple[cp.Problem, cp.Variable]:
    """Geometric program obtained by condensing each user's total received power at ``q_bar``.

    User k contributes the factor (g_k(q) / m_k(q))^omega_k, where g_k = sum_{i!=k} b_{k,i} q_i + 1 is kept
    exact and m_k is the monomial prod_j (u_kj(q) / lambda_j)^lambda_j matching u_k = a_k q_k + g_k at q_bar.
    """
    n_users = signal.size
    q = cp.Variable(n_users, pos=True)
    factors = []
    for k in range(n_users):
        if weights[k] <= 0.0:
            continue
        coefficients = interference[k].copy()
        coefficients[k] = signal[k]
        terms = coefficients * q_bar
        total = terms.sum() + 1.0
        shares = terms / total
        noise_share = 1.0 / total

        active = np.flatnonzero(terms > 0.0)
        log_scale = -noise_share * np.log(noise_share) + np.sum(
            shares[active] * (np.log(coefficients[active]) - np.log(shares[active]))
        )
        inverse_monomial = float(np.exp(-log_scale))
        for i in active:
            inverse_monomial = inverse_monomial * q[i] ** -shares[i]

        denominator = 1.0
        for i in np.flatnonzero(interference[k] > 0.0):
            denominator = denominator + interference[k, i] * q[i]

        ratio = denominator * inverse_monomial
        factors.append(ratio if weights[k] == 1.0 else ratio ** weights[k])

    objective = cp.Minimize(reduce(operator.mul, factors))
    constraints = [cp.sum(q) <= 1.0, q >= FLOOR_FRACTION]
    return cp.Problem(objective, constraints), q


def _condensation_rounds(
    sub: PowerSubproblem,
    p: np.ndarray,
    tol: float,
    max_rounds: int,
) -> tuple[np.ndarray, int]:
    """Run condensation rounds from p until the true objective improves by less than ``tol``.

    Raises:
        PowerSolverError: If the conic solver fails or reports a non-optimal status.
    """
    scale = sub.budget / sub.noise
    signal, interference = sub.signal * scale, sub.interference * scale
    weights = sub.weights / sub.weights.max()

    value = sub.objective(p)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        problem, q = _condensed_problem(signal, interference, weights, p / sub.budget)
        try:
            problem.solve(gp=True)
        except cp.error.SolverError as e:
            raise PowerSolverError(f"Condensed power problem could not be solved: {e}") from e
        if problem.status not in ACCEPTED_STATUSES or q.value is None:
            raise PowerSolverError(f"Condensed power problem ended with status {problem.status}")

        candidate = project_capped_simplex(np.asarray(q.value, dtype=float) * sub.budget, sub.budget, sub.floor)
        candidate_value = sub.objective(candidate)
        logger.debug(f"Power condensation round {rounds}: f={candidate_value:.8f} (was {value:.8f})")
        if candidate_value <= value:
            break
        improvement = candidate_value - value
        p, value = candidate, candidate_value
        if improvement < tol:
            break

    saturated = _saturate_budget(p, sub.budget)
    if sub.objective(saturated) >= value:
        p = saturated
    return p, rounds


def _near_vertices(sub: PowerSubproblem) -> list[np.ndarray]:
    """Allocations giving ``NEAR_VERTEX_SHARE`` of the budget to one user, plus the best one sharing it between two.

    Only the best two-user allocation is kept, so the number of starts stays linear in K.
    """
    n_users = sub.n_users
    if n_users == 1:
        return []
    vertices = []
    for k in range(n_users):
        p = np.full(n_users, (1.0 - NEAR_VERTEX_SHARE) * sub.budget / (n_users - 1))
        p[k] = NEAR_VERTEX_SHARE * sub.budget
        vertices.append(p)
    if n_users < 3:
        return vertices

    edges = []
    for i, j in combinations(range(n_users), 2):
        p = np.full(n_users, (1.0 - NEAR_VERTEX_SHARE) * sub.budget / (n_users - 2))
        p[[i, j]] = NEAR_VERTEX_SHARE * sub.budget / 2
        edges.append(p)
    edges = np.array(edges)
    vertices.append(edges[int(np.argmax(sub.objective(edges)))])
    return vertices


def run_power_stage(
    sub: PowerSubproblem,
    p0: PowerVector | np.ndarray,
    tol: float = 1e-6,
    max_rounds: int = 50,
    multistart: bool = False,
) -> PowerStageResult:
    """Condensation from ``p0`` (and from each near-vertex allocation if ``multistart``), keeping the best.

    The result is never worse than ``p0``. Solver failures fall back to projected gradient ascent.
    """
    start = _start_array(sub, p0)
    starts = [start, *(_near_vertices(sub) if multistart else [])]

    best_p, best_value, total_rounds, method = start, sub.objective(start), 0, "gp"
    for candidate_start in starts:
        try:
            p, rounds = _condensation_rounds(sub, candidate_start, tol, max_rounds)
        except PowerSolverError as e:
            logger.warning(f"GP power solve failed ({e}); falling back to projected gradient")
            p, rounds = _projected_gradient(sub, candidate_start, tol, max_iterations=500)
            method = "pg"
        total_rounds += rounds
        value = sub.objective(p)
        if value > best_value:
            best_p, best_value = p, value

    return PowerStageResult(
        p=PowerVector(p=best_p, budget=sub.budget),
        objective=best_value,
        rounds=total_rounds,
        method=method,
        kkt_residual=kkt_residual(sub, best_p),
    )


def allocate_power_gp(
    sub: PowerSubproblem,
    p0: PowerVector | np.ndarray,
    tol: float = 1e-6,
    max_rounds: int = 50,
    multistart: bool = False,
) -> PowerVector:
    """Successive GP condensation from ``p0``; returns a feasible allocation at least as good as ``p0``."""
    return run_power_stage(sub, p0, tol, max_rounds, multistart).p


def _simplex_grid(n_users: int, resolution: int) -> np.ndarray:
    """Integer points with positive entries summing to at most ``resolution``, in lexicographic order."""
    points = np.arange(1, resolution + 1)[:, None]
    for _ in range(n_users - 1):
        rows = []
        for row in points:
            remaining = resolution - int(row.sum())
            if remaining >= 1:
                tails = np.arange(1, remaining + 1)[:, None]
                rows.append(np.hstack([np.repeat(row[None, :], remaining, axis=0), tails]))
        points = np.concatenate(rows) if rows else np.empty((0, points.shape[1] + 1), dtype=int)
    return points


def power_oracle(sub: PowerSubproblem, grid_resolution: int) -> PowerVector:
    """Brute-force maximizer over the grid {P * i / resolution} of the budget simplex (K <= 3).

    Ties go to the lexicographically smallest grid point.
    """
    if sub.n_users > MAX_ORACLE_USERS:
        raise ValueError(f"Grid oracle supports at most {MAX_ORACLE_USERS} users, got {sub.n_users}")
    if grid_resolution < sub.n_users:
        raise ValueError(f"Grid resolution must be at least the number of users, got {grid_resolution}")

    grid = _simplex_grid(sub.n_users, grid_resolution) * (sub.budget / grid_resolution)
    values = sub.objective(grid)
    return PowerVector(p=grid[int(np.argmax(values))], budget=sub.budget)
