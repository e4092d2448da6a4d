"""Alternating optimization of the IRS phases, the BS beamformers and the transmit powers.

One outer iteration runs three block updates, each starting from the output of the previous one:

- phase vector theta on the circle manifold (conjugate gradient, W and p fixed)
- beamforming matrix W on the Oblique manifold (conjugate gradient, theta and p fixed)
- powers p by successive GP condensation (theta and W fixed)

The loop stops when the weighted sum-rate changes by less than ``outer_tolerance`` or at the iteration cap.
A final joint refinement of theta and W (p fixed) then drives both Riemannian gradient norms below
``stationarity_ratio`` times their values at the initial point.
"""

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from irs_beamforming import logger
from irs_beamforming.config import SystemConfig
from irs_beamforming.errors import DimensionMismatchError
from irs_beamforming.manifold import CircleManifold, ObliqueManifold, ProductManifold
from irs_beamforming.objective import (
    effective_channels,
    grad_theta,
    grad_w_from_channels,
    weighted_sum_rate,
    weighted_sum_rate_from_channels,
)
from irs_beamforming.power import extract_subproblem, run_power_stage
from irs_beamforming.rcg import RcgOptions, rcg_maximize
from irs_beamforming.types import BeamMatrix, ChannelSet, PhaseVector, PowerVector

STAGE_TOLERANCE = 1e-9
REFINE_TOLERANCE = float(np.finfo(float).tiny)
ZERO_ROW_NORM = 1e-300

StageName = Literal["theta", "w", "power", "refine"]
TerminationReason = Literal["converged", "stagnated", "max_outer_iterations", "baseline"]

STAGE_ORDERS: dict[str, tuple[StageName, ...]] = {
    "theta_w_power": ("theta", "w", "power"),
    "power_theta_w": ("power", "theta", "w"),
}


class StageRecord(BaseModel):
    """Objective before and after one block update."""

    model_config = ConfigDict(frozen=True)

    stage: StageName
    before: float
    after: float
    iterations: int
    stagnated: bool = False
    grad_norm: float | None = None

    @property
    def delta(self) -> float:
        return self.after - self.before


class OuterIteration(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    objective_before: float
    objective: float
    stages: list[StageRecord]

    @property
    def delta(self) -> float:
        return self.objective - self.objective_before


class ComplexityEstimate(BaseModel):
    """Operation counts of the alternating solver.

    Per-iteration counts of each building block plus the total for N0 power rounds, N1 phase-vector
    iterations and N2 beamforming iterations.
    """

    model_config = ConfigDict(frozen=True)

    theta_gradient: int
    w_gradient: int
    theta_retraction: int
    w_retraction: int
    theta_projection: int
    w_projection: int
    theta_armijo: int
    w_armijo: int
    power_round: int
    total: int


class Solution(BaseModel):
    """Final blocks, objective and per-iteration diagnostics of one solve."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta: PhaseVector
    w: BeamMatrix
    p: PowerVector
    objective: float
    initial_objective: float
    trace: list[OuterIteration] = Field(default_factory=list)
    termination_reason: TerminationReason
    refinement: StageRecord | None = None

    initial_theta_grad_norm: float = 0.0
    initial_w_grad_norm: float = 0.0
    theta_grad_norm: float = 0.0
    w_grad_norm: float = 0.0

    power_rounds: int = 0
    theta_iterations: int = 0
    w_iterations: int = 0

    @property
    def outer_iterations(self) -> int:
        return len(self.trace)

    @property
    def objectives(self) -> np.ndarray:
        """Objective at the initial point followed by the objective after every outer iteration."""
        return np.array([self.initial_objective, *(it.objective for it in self.trace)])


def _check_dimensions(cfg: SystemConfig, channels: ChannelSet) -> None:
    expected = (cfg.system.n_irs, cfg.n_irs_elements, cfg.system.n_bs_antennas, cfg.system.n_users)
    actual = (channels.n_irs, channels.n_elements, channels.n_antennas, channels.n_users)
    if expected != actual:
        raise DimensionMismatchError(f"Channel dimensions (L, M, N, K) = {actual} do not match the config {expected}")


def matched_filter(vh: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row k = v_k^H / ||v_k||; a vanishing effective channel gets a random unit row instead."""
    norms = np.linalg.norm(vh, axis=1)
    w = np.empty_like(vh)
    for k, norm in enumerate(norms):
        if norm <= ZERO_ROW_NORM:
            logger.warning(f"Effective channel of user {k} vanishes; using a random beamformer row")
            row = rng.standard_normal(vh.shape[1]) + 1j * rng.standard_normal(vh.shape[1])
            w[k] = row / np.linalg.norm(row)
        else:
            w[k] = vh[k] / norm
    return w


def init_point(
    cfg: SystemConfig,
    channels: ChannelSet,
    rng: np.random.Generator,
) -> tuple[PhaseVector, BeamMatrix, PowerVector]:
    """Uniform random IRS phases, matched-filter beamformers for those phases and an equal power split."""
    _check_dimensions(cfg, channels)
    theta = PhaseVector.from_angles(rng.uniform(0.0, 2 * np.pi, channels.n_irs * channels.n_elements))
    vh = effective_channels(channels, theta).vh
    w = BeamMatrix(w=matched_filter(vh, rng))
    p = PowerVector.uniform(channels.n_users, cfg.total_power_w)
    return theta, w, p


class AlternatingOptimizer:
    """Block-coordinate ascent of the weighted sum-rate over (theta, W, p)."""

    def __init__(self, cfg: SystemConfig, channels: ChannelSet) -> None:
        _check_dimensions(cfg, channels)
        self._cfg = cfg
        self._channels = channels
        self._theta_manifold = CircleManifold(channels.n_irs * channels.n_elements)
        self._w_manifold = ObliqueManifold(channels.n_users, channels.n_antennas)
        self._theta_options = RcgOptions.from_solver(cfg.solver, cfg.solver.theta_tolerance)
        self._w_options = RcgOptions.from_solver(cfg.solver, cfg.solver.beam_tolerance)
        self._counts = {"theta": 0, "w": 0, "power": 0}

    def objective(self, theta: np.ndarray, w: np.ndarray, p: np.ndarray) -> float:
        return weighted_sum_rate(theta, w, p, self._channels, self._cfg)

    def gradient_norms(self, theta: np.ndarray, w: np.ndarray, p: np.ndarray) -> tuple[float, float]:
        """Riemannian gradient norms of the phase vector and the beamforming matrix."""
        cfg = self._cfg
        g_theta = self._theta_manifold.riemannian_grad(theta, 2 * grad_theta(theta, w, p, self._channels, cfg))
        vh = effective_channels(self._channels, theta).vh
        g_w = self._w_manifold.riemannian_grad(w, 2 * grad_w_from_channels(vh, w, p, cfg.weights, cfg.noise_power_w))
        return self._theta_manifold.norm(g_theta), self._w_manifold.norm(g_w)

    def run(self, init: tuple[PhaseVector, BeamMatrix, PowerVector] | None = None) -> Solution:
        cfg = self._cfg
        if init is None:
            init = init_point(cfg, self._channels, np.random.default_rng(cfg.seed))
        theta, w, p = (np.array(init[0].theta), np.array(init[1].w), np.array(init[2].p))

        initial_objective = self.objective(theta, w, p)
        initial_norms = self.gradient_norms(theta, w, p)
        objective = initial_objective
        logger.info(f"🚀 Starting alternating optimization (f = {objective:.6f} bits/s/Hz)")

        trace: list[OuterIteration] = []
        reason: TerminationReason = "max_outer_iterations"
        stages = STAGE_ORDERS[cfg.solver.stage_order]
        for iteration in range(1, cfg.solver.max_outer_iterations + 1):
            objective_before = objective
            records = []
            for stage in stages:
                theta, w, p, record = self._run_stage(stage, theta, w, p, objective)
                objective = record.after
                records.append(record)

            trace.append(
                OuterIteration(
                    iteration=iteration,
                    objective_before=objective_before,
                    objective=objective,
                    stages=records,
                )
            )
            deltas = ", ".join(f"{r.stage} {r.delta:+.3e}" for r in records)
            logger.info(f"Outer iteration {iteration}: f = {objective:.6f} ({deltas})")

            if abs(objective - objective_before) < cfg.solver.outer_tolerance:
                reason = "stagnated" if any(r.stagnated for r in records) else "converged"
                break

        refinement = None
        if cfg.solver.stationarity_ratio is not None:
            theta, w, refinement = self._refine(theta, w, p, initial_norms, objective)
            objective = refinement.after

        theta_norm, w_norm = self.gradient_norms(theta, w, p)
        logger.info(f"✅ Finished after {len(trace)} outer iterations ({reason}), f = {objective:.6f} bits/s/Hz")
        return Solution(
            theta=PhaseVector(theta=theta),
            w=BeamMatrix(w=w),
            p=PowerVector(p=p, budget=cfg.total_power_w),
            objective=self.objective(theta, w, p),
            initial_objective=initial_objective,
            trace=trace,
            termination_reason=reason,
            refinement=refinement,
            initial_theta_grad_norm=initial_norms[0],
            initial_w_grad_norm=initial_norms[1],
            theta_grad_norm=theta_norm,
            w_grad_norm=w_norm,
            power_rounds=self._counts["power"],
            theta_iterations=self._counts["theta"],
            w_iterations=self._counts["w"],
        )

    def _run_stage(
        self,
        stage: StageName,
        theta: np.ndarray,
        w: np.ndarray,
        p: np.ndarray,
        before: float,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, StageRecord]:
        if stage == "theta":
            new_theta, record = self._theta_stage(theta, w, p, before)
            candidate = (new_theta, w, p)
        elif stage == "w":
            new_w, record = self._w_stage(theta, w, p, before)
            candidate = (theta, new_w, p)
        else:
            new_p, record = self._power_stage(theta, w, p, before)
            candidate = (theta, w, new_p)

        self._counts[stage] += record.iterations
        if record.after < before - STAGE_TOLERANCE:
            logger.warning(f"Stage {stage} decreased the objective by {before - record.after:.3e}; keeping its input")
            return theta, w, p, record.model_copy(update={"after": before})
        return *candidate, record

    def _theta_stage(
        self,
        theta: np.ndarray,
        w: np.ndarray,
        p: np.ndarray,
        before: float,
    ) -> tuple[np.ndarray, StageRecord]:
        channels, cfg = self._channels, self._cfg

        def f(x: np.ndarray) -> float:
            return weighted_sum_rate(x, w, p, channels, cfg)

        def egrad(x: np.ndarray) -> np.ndarray:
            return 2 * grad_theta(x, w, p, channels, cfg)

        theta, rcg_trace = rcg_maximize(f, egrad, self._theta_manifold, theta, self._theta_options)
        if rcg_trace.stagnated:
            logger.debug("Phase-vector line search stagnated")
        record = StageRecord(
            stage="theta",
            before=before,
            after=self.objective(theta, w, p),
            iterations=rcg_trace.iterations,
            stagnated=rcg_trace.stagnated,
            grad_norm=rcg_trace.final_grad_norm,
        )
        return theta, record

    def _w_stage(
        self,
        theta: np.ndarray,
        w: np.ndarray,
        p: np.ndarray,
        before: float,
    ) -> tuple[np.ndarray, StageRecord]:
        cfg = self._cfg
        vh = effective_channels(self._channels, theta).vh
        weights, sigma2 = cfg.weights, cfg.noise_power_w

        def f(x: np.ndarray) -> float:
            return weighted_sum_rate_from_channels(vh, x, p, weights, sigma2)

        def egrad(x: np.ndarray) -> np.ndarray:
            return 2 * grad_w_from_channels(vh, x, p, weights, sigma2)

        w, rcg_trace = rcg_maximize(f, egrad, self._w_manifold, w, self._w_options)
        if rcg_trace.stagnated:
            logger.debug("Beamforming line search stagnated")
        record = StageRecord(
            stage="w",
            before=before,
            after=self.objective(theta, w, p),
            iterations=rcg_trace.iterations,
            stagnated=rcg_trace.stagnated,
            grad_norm=rcg_trace.final_grad_norm,
        )
        return w, record

    def _refine(
        self,
        theta: np.ndarray,
        w: np.ndarray,
        p: np.ndarray,
        initial_norms: tuple[float, float],
        before: float,
    ) -> tuple[np.ndarray, np.ndarray, StageRecord]:
        """Conjugate gradient over (theta, W) jointly until both gradient norms meet the stationarity ratio.

        A bound on the joint gradient norm bounds both blocks, so the run targets the smaller of the two
        block thresholds, floored at ``gradient_tolerance``. Line searches start from the previous accepted step,
        so the step size follows the scale of the objective.
        """
        cfg, channels = self._cfg, self._channels
        ratio = cfg.solver.stationarity_ratio
        targets = (ratio * initial_norms[0], ratio * initial_norms[1])
        theta_norm, w_norm = self.gradient_norms(theta, w, p)
        if theta_norm <= targets[0] and w_norm <= targets[1]:
            return theta, w, StageRecord(stage="refine", before=before, after=before, iterations=0)

        joint = ProductManifold(self._theta_manifold, self._w_manifold)

        def f(x: np.ndarray) -> float:
            x_theta, x_w = joint.split(x)
            return weighted_sum_rate(x_theta, x_w, p, channels, cfg)

        def egrad(x: np.ndarray) -> np.ndarray:
            x_theta, x_w = joint.split(x)
            vh = effective_channels(channels, x_theta).vh
            g_theta = grad_theta(x_theta, x_w, p, channels, cfg)
            g_w = grad_w_from_channels(vh, x_w, p, cfg.weights, cfg.noise_power_w)
            return 2 * joint.join([g_theta, g_w])

        gradient_tolerance = max(min(targets), cfg.solver.gradient_tolerance)
        opts = RcgOptions.from_solver(cfg.solver, REFINE_TOLERANCE).model_copy(
            update={"gradient_tolerance": gradient_tolerance, "adaptive_step": True}
        )
        x, rcg_trace = rcg_maximize(f, egrad, joint, joint.join([theta, w]), opts)
        new_theta, new_w = joint.split(x)
        record = StageRecord(
            stage="refine",
            before=before,
            after=self.objective(new_theta, new_w, p),
            iterations=rcg_trace.iterations,
            stagnated=rcg_trace.stagnated,
            grad_norm=rcg_trace.final_grad_norm,
        )
        logger.debug(f"Joint refinement: {rcg_trace.iterations} iterations ({rcg_trace.reason}), {record.delta:+.3e}")
        if record.after < before - STAGE_TOLERANCE:
            logger.warning(f"Joint refinement decreased the objective by {-record.delta:.3e}; keeping its input")
            return theta, w, record.model_copy(update={"after": before})
        return np.array(new_theta), np.array(new_w), record

    def _power_stage(
        self,
        theta: np.ndarray,
        w: np.ndarray,
        p: np.ndarray,
        before: float,
    ) -> tuple[np.ndarray, StageRecord]:
        solver = self._cfg.solver
        sub = extract_subproblem(theta, w, self._channels, self._cfg)
        result = run_power_stage(sub, p, solver.power_tolerance, solver.max_power_rounds, solver.power_multistart)
        p = np.array(result.p.p)
        record = StageRecord(stage="power", before=before, after=self.objective(theta, w, p), iterations=result.rounds)
        return p, record


def solve(
    cfg: SystemConfig,
    channels: ChannelSet,
    init: tuple[PhaseVector, BeamMatrix, PowerVector] | None = None,
) -> Solution:
    """Run the alternating optimization from ``init`` (or from ``init_point`` seeded with ``cfg.seed``)."""
    return AlternatingOptimizer(cfg, channels).run(init)


def random_baseline(
    cfg: SystemConfig,
    channels: ChannelSet,
    n_draws: int,
    rng: np.random.Generator,
) -> Solution:
    """Best of ``n_draws`` random-phase candidates, each with matched-filter beams and equal powers."""
    if n_draws < 1:
        raise ValueError(f"Number of random draws must be at least 1, got {n_draws}")
    _check_dimensions(cfg, channels)

    p = PowerVector.uniform(channels.n_users, cfg.total_power_w)
    best = None
    for _ in range(n_draws):
        theta = PhaseVector.from_angles(rng.uniform(0.0, 2 * np.pi, channels.n_irs * channels.n_elements))
        w = BeamMatrix(w=matched_filter(effective_channels(channels, theta).vh, rng))
        value = weighted_sum_rate(theta, w, p, channels, cfg)
        if best is None or value > best[0]:
            best = (value, theta, w)

    value, theta, w = best
    return Solution(
        theta=theta,
        w=w,
        p=p,
        objective=value,
        initial_objective=value,
        termination_reason="baseline",
    )


def complexity_estimate(cfg: SystemConfig, n_power: int, n_theta: int, n_w: int) -> ComplexityEstimate:
    """Operation counts for ``n_power`` power rounds, ``n_theta`` phase-vector and ``n_w`` beamforming iterations."""
    K, N, L = cfg.system.n_users, cfg.system.n_bs_antennas, cfg.system.n_irs
    LM = L * cfg.n_irs_elements

    theta_gradient = 6 * K * N * LM + (2 * K**2 - 1) * N**2
    w_gradient = (5 * K**2 + 2 * K - 4) * LM * N
    theta_per_iteration = theta_gradient + 9 * LM
    w_per_iteration = w_gradient + 9 * K * N + K * N**2
    return ComplexityEstimate(
        theta_gradient=theta_gradient,
        w_gradient=w_gradient,
        theta_retraction=LM,
        w_retraction=K * N,
        theta_projection=2 * LM,
        w_projection=2 * K * N,
        theta_armijo=6 * LM,
        w_armijo=K * N**2 + 6 * K * N,
        power_round=K**3,
        total=n_power * K**3 + n_theta * theta_per_iteration + n_w * w_per_iteration,
    )
