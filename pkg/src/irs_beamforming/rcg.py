"""Riemannian conjugate-gradient ascent shared by the phase-vector and beamforming-matrix stages.

Each iteration computes the Riemannian gradient, couples the previous direction in through the
Polak-Ribiere parameter (old vectors are carried to the new tangent space by projection), picks a step
with Armijo backtracking and retracts back onto the manifold.
"""

from collections.abc import Callable
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from irs_beamforming import logger
from irs_beamforming.config import SolverSection
from irs_beamforming.errors import DegenerateRetractionError, SearchDirectionError
from irs_beamforming.manifold import Manifold, TangentVector

Objective = Callable[[np.ndarray], float]
EuclideanGradient = Callable[[np.ndarray], np.ndarray]
TerminationReason = Literal["converged", "stationary", "stagnated", "max_iterations"]


class RcgOptions(BaseModel):
    """Line-search and stopping parameters of one conjugate-gradient run"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    initial_step: float = Field(default=1.0, description="Armijo initial step alpha_0", gt=0.0)
    shrink: float = Field(default=0.5, description="Armijo shrink factor tau", gt=0.0, lt=1.0)
    sufficient_increase: float = Field(default=1e-4, description="Armijo coefficient sigma_A", gt=0.0, lt=1.0)
    max_backtracks: int = Field(default=50, description="Step reductions before reporting stagnation", ge=1)
    tolerance: float = Field(default=1e-4, description="Stop when |f(x_t+1) - f(x_t)| is below this", gt=0.0)
    max_iterations: int = Field(default=500, description="Iteration cap", ge=1)
    pr_plus: bool = Field(default=True, description="Clamp the Polak-Ribiere parameter at zero")
    gradient_tolerance: float = Field(default=1e-12, description="Stationarity threshold on the gradient norm", ge=0.0)
    adaptive_step: bool = Field(
        default=False,
        description="Start each line search from the previous accepted step, scaled by 1/shrink when it was "
        "accepted without backtracking, instead of from initial_step",
    )

    @classmethod
    def from_solver(cls, solver: SolverSection, tolerance: float) -> "RcgOptions":
        """Build options from the solver config section with a stage-specific tolerance."""
        return cls(
            initial_step=solver.armijo_initial_step,
            shrink=solver.armijo_shrink,
            sufficient_increase=solver.armijo_sufficient_increase,
            max_backtracks=solver.max_backtracks,
            tolerance=tolerance,
            max_iterations=solver.max_inner_iterations,
            pr_plus=solver.pr_plus,
            gradient_tolerance=solver.gradient_tolerance,
        )


class RcgIteration(BaseModel):
    """One accepted iterate. Iteration 0 is the starting point."""

    model_config = ConfigDict(frozen=True)

    iteration: int
    objective: float
    grad_norm: float
    step: float
    lam: float
    backtracks: int


class RcgTrace(BaseModel):
    records: list[RcgIteration] = Field(default_factory=list)
    stagnated: bool = False
    reason: TerminationReason = "max_iterations"

    @property
    def iterations(self) -> int:
        """Number of accepted steps (the starting point is not counted)."""
        return max(len(self.records) - 1, 0)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([record.objective for record in self.records])

    @property
    def initial_grad_norm(self) -> float:
        return self.records[0].grad_norm

    @property
    def final_grad_norm(self) -> float:
        return self.records[-1].grad_norm

    def is_monotone(self, tol: float = 0.0) -> bool:
        """Whether the objective never decreases by more than ``tol`` between records."""
        return bool(np.all(np.diff(self.objectives) >= -tol))

    def to_frame(self) -> pd.DataFrame:
        """Records as a table with columns iteration, objective, grad_norm, step, lambda, backtracks."""
        frame = pd.DataFrame([record.model_dump() for record in self.records])
        if frame.empty:
            frame = pd.DataFrame(columns=list(RcgIteration.model_fields))
        return frame.rename(columns={"lam": "lambda"})


class ArmijoResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    step: float
    point: np.ndarray
    value: float
    backtracks: int
    stagnated: bool


def _real_inner(u: TangentVector, v: TangentVector) -> float:
    return float(np.real(np.vdot(u.data, v.data)))


def polak_ribiere(g_new: TangentVector, g_old_transported: TangentVector, pr_plus: bool = True) -> float:
    """Polak-Ribiere parameter <g_new, g_new - g_old> / ||g_old||^2 with both gradients at the new point.

    A vanishing old gradient restarts the method (returns 0).
    """
    denominator = _real_inner(g_old_transported, g_old_transported)
    if denominator == 0.0:
        return 0.0
    lam = (_real_inner(g_new, g_new) - _real_inner(g_new, g_old_transported)) / denominator
    return max(lam, 0.0) if pr_plus else lam


def conjugate_direction(manifold: Manifold, g_new: TangentVector, d_old: TangentVector, lam: float) -> TangentVector:
    """New search direction g_new + lam * P(d_old), reset to g_new unless it is an ascent direction."""
    transported = manifold.project(g_new.base, d_old)
    d_new = g_new + transported.scaled(lam)
    if manifold.inner(d_new, g_new) <= 0.0:
        return g_new
    return d_new


def armijo_search(
    f: Objective,
    manifold: Manifold,
    point: np.ndarray,
    f0: float,
    grad: TangentVector,
    d: TangentVector,
    opts: RcgOptions,
    initial_step: float | None = None,
) -> ArmijoResult:
    """Backtrack until f(Ret(alpha*d)) >= f0 + sigma_A * alpha * <grad, d>.

    The first trial step is ``initial_step``, or ``opts.initial_step`` when that is None.

    Steps whose retraction is degenerate are skipped like rejected ones. If the backtrack budget runs out, the
    point is returned unchanged with step 0 and ``stagnated`` set.

    Raises:
        SearchDirectionError: If ``d`` is not an ascent direction.
    """
    slope = manifold.inner(grad, d)
    if slope <= 0.0:
        raise SearchDirectionError(f"Search direction is not an ascent direction (<grad, d> = {slope:.3e})")

    step = opts.initial_step if initial_step is None else initial_step
    for backtracks in range(opts.max_backtracks + 1):
        try:
            candidate = manifold.retract(point, d, step)
        except DegenerateRetractionError:
            logger.debug(f"Degenerate retraction at step {step:.3e}, shrinking")
        else:
            value = f(candidate)
            if np.isfinite(value) and value >= f0 + opts.sufficient_increase * step * slope:
                return ArmijoResult(step=step, point=candidate, value=value, backtracks=backtracks, stagnated=False)
        step *= opts.shrink

    return ArmijoResult(step=0.0, point=point, value=f0, backtracks=opts.max_backtracks, stagnated=True)


def rcg_maximize(
    f: Objective,
    egrad_f: EuclideanGradient,
    manifold: Manifold,
    x0: np.ndarray,
    opts: RcgOptions,
) -> tuple[np.ndarray, RcgTrace]:
    """Maximize ``f`` over ``manifold`` starting from ``x0``.

    ``egrad_f`` returns the Euclidean gradient under the real inner product Re<u, v>. The run stops when the
    objective changes by less than ``opts.tolerance``, when the Riemannian gradient vanishes, when the line
    search stagnates or at the iteration cap. Every accepted iterate increases ``f``.

    ``RcgTrace.iterations`` counts accepted steps only. A start whose Riemannian gradient norm is already at
    most ``opts.gradient_tolerance`` costs one gradient evaluation and is returned unchanged with reason
    ``"stationary"``, a single starting record and ``iterations == 0``.
    """
    x = np.array(x0, dtype=complex)
    manifold.check_shape(np.shape(x))
    f_x = f(x)
    grad = manifold.riemannian_grad(x, egrad_f(x))
    grad_norm = manifold.norm(grad)

    start = RcgIteration(iteration=0, objective=f_x, grad_norm=grad_norm, step=0.0, lam=0.0, backtracks=0)
    trace = RcgTrace(records=[start])
    if grad_norm <= opts.gradient_tolerance:
        trace.reason = "stationary"
        return x, trace

    d = grad
    step0 = opts.initial_step
    for iteration in range(1, opts.max_iterations + 1):
        result = armijo_search(f, manifold, x, f_x, grad, d, opts, step0)
        if result.stagnated:
            logger.debug(f"{manifold}: line search stagnated at iteration {iteration} (f = {f_x:.6f})")
            trace.stagnated = True
            trace.reason = "stagnated"
            break

        if opts.adaptive_step:
            step0 = result.step / opts.shrink if result.backtracks == 0 else result.step
        x_new = result.point
        grad_new = manifold.riemannian_grad(x_new, egrad_f(x_new))
        lam = polak_ribiere(grad_new, manifold.project(x_new, grad), opts.pr_plus)
        d = conjugate_direction(manifold, grad_new, d, lam)

        delta = result.value - f_x
        x, f_x, grad = x_new, result.value, grad_new
        grad_norm = manifold.norm(grad)
        trace.records.append(
            RcgIteration(
                iteration=iteration,
                objective=f_x,
                grad_norm=grad_norm,
                step=result.step,
                lam=lam,
                backtracks=result.backtracks,
            )
        )
        logger.debug(
            f"{manifold} iter {iteration}: f={f_x:.8f} |grad|={grad_norm:.3e} step={result.step:.3e} lambda={lam:.3e}"
        )

        if grad_norm <= opts.gradient_tolerance:
            trace.reason = "stationary"
            break
        if abs(delta) < opts.tolerance:
            trace.reason = "converged"
            break

    return x, trace
