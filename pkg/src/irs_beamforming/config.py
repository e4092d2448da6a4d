import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator
from rich.table import Table

from irs_beamforming.errors import ConfigValidationError

StageOrder = Literal["theta_w_power", "power_theta_w"]


def dbm_to_watts(dbm: float) -> float:
    """Convert a power level in dBm to watts."""
    try:
        watts = math.pow(10.0, (dbm - 30.0) / 10.0)
    except OverflowError as e:
        raise ValueError(f"{dbm} dBm overflows the dBm to watt conversion") from e
    if not math.isfinite(watts):
        raise ValueError(f"{dbm} dBm overflows the dBm to watt conversion")
    return watts


def watts_to_dbm(watts: float) -> float:
    """Convert a power in watts to dBm."""
    if watts <= 0:
        raise ValueError(f"Power must be positive to be expressed in dBm, got {watts}")
    return 10.0 * math.log10(watts) + 30.0


class ConfigBaseModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(ConfigBaseModel):
    """Array sizes, power budget, noise, user weights and path-loss parameters"""

    n_bs_antennas: int = Field(
        default=32,
        description="Number of BS antennas N (ULA)",
    )

    irs_rows: int = Field(
        default=4,
        description="IRS elements along the horizontal axis M_x",
    )

    irs_cols: int = Field(
        default=5,
        description="IRS elements along the vertical axis M_y",
    )

    n_irs: int = Field(
        default=2,
        description="Number of IRSs L",
    )

    n_users: int = Field(
        default=2,
        description="Number of single-antenna users K",
    )

    total_power_dbm: float = Field(
        default=30.0,
        description="Total transmit power budget P in dBm",
    )

    noise_power_dbm: float = Field(
        default=-85.0,
        description="Receiver noise power sigma^2 in dBm",
    )

    user_weights: list[float] | None = Field(
        default=None,
        description="Rate weights omega_k, one per user. If None, every user is weighted 1.",
    )

    path_loss_alpha_db: float = Field(
        default=61.4,
        description="Path-loss intercept alpha in dB",
    )

    path_loss_beta: float = Field(
        default=20.0,
        description="Path-loss exponent beta (dB per decade of distance)",
    )

    shadowing_variance_db2: float = Field(
        default=0.0,
        description="Variance of the log-normal shadowing term xi in dB^2 (0 disables shadowing)",
        ge=0.0,
    )

    @field_validator("n_bs_antennas", "irs_rows", "irs_cols", "n_irs", "n_users")
    @classmethod
    def validate_positive_count(cls, v: int, info: ValidationInfo) -> int:
        """Every array or node count must be at least one."""
        if v < 1:
            raise ValueError(f"{info.field_name} must be ≥ 1")
        return v

    @field_validator("total_power_dbm", "noise_power_dbm")
    @classmethod
    def validate_dbm_conversion(cls, v: float) -> float:
        """Reject levels whose linear value is not a finite positive number of watts."""
        if not math.isfinite(v):
            raise ValueError("power level must be a finite number of dBm")
        if dbm_to_watts(v) <= 0.0:
            raise ValueError(f"{v} dBm underflows to zero watts")
        return v

    @field_validator("user_weights")
    @classmethod
    def validate_user_weights(cls, v: list[float] | None) -> list[float] | None:
        """Weights are nonnegative and at least one of them is positive."""
        if v is None:
            return v
        if any(not math.isfinite(w) or w < 0.0 for w in v):
            raise ValueError("user weights must be finite and nonnegative")
        if not any(w > 0.0 for w in v):
            raise ValueError("at least one positive weight is required")
        return v

    @model_validator(mode="after")
    def validate_weight_count(self) -> "SystemSection":
        """Validate that one weight is given per user."""
        if self.user_weights is not None and len(self.user_weights) != self.n_users:
            raise ValueError(
                f"Number of user weights ({len(self.user_weights)}) must match n_users ({self.n_users})"
            )
        return self


class GeometrySection(ConfigBaseModel):
    """Deployment geometry: BS at the origin, users on the BS line, IRSs on a parallel line"""

    bs_irs_distance: float = Field(
        default=11.0,
        description="Horizontal distance d_l between the BS and the first IRS in meters",
        gt=0.0,
    )

    vertical_offset: float = Field(
        default=1.0,
        description="Vertical distance d_v between the BS/user line and the IRS line in meters",
        ge=0.0,
    )

    irs_line_end: float = Field(
        default=50.0,
        description="Horizontal position of the last IRS in meters (IRSs are equally spaced up to here)",
        gt=0.0,
    )

    first_user_distance: float = Field(
        default=5.0,
        description="Distance d_k between the BS and the first user in meters",
        ge=0.0,
    )

    user_spacing: float = Field(
        default=5.0,
        description="Spacing between consecutive users in meters",
        gt=0.0,
    )

    @model_validator(mode="after")
    def validate_irs_line(self) -> "GeometrySection":
        """Validate that the IRS line does not end before it starts."""
        if self.irs_line_end < self.bs_irs_distance:
            raise ValueError(
                f"irs_line_end ({self.irs_line_end}) must not be smaller than bs_irs_distance ({self.bs_irs_distance})"
            )
        return self


class SolverSection(ConfigBaseModel):
    """Tolerances, iteration caps and line-search parameters of the alternating solver"""

    theta_tolerance: float = Field(
        default=1e-4,
        description="Stop the phase-vector loop when the objective changes by less than this (upsilon, bits/s/Hz)",
        gt=0.0,
    )

    beam_tolerance: float = Field(
        default=1e-4,
        description="Stop the beamforming-matrix loop when the objective changes by less than this (nu, bits/s/Hz)",
        gt=0.0,
    )

    outer_tolerance: float = Field(
        default=1e-3,
        description="Stop the alternating loop when the objective changes by less than this (zeta, bits/s/Hz)",
        gt=0.0,
    )

    max_inner_iterations: int = Field(
        default=500,
        description="Iteration cap of each conjugate-gradient loop",
        ge=1,
    )

    max_outer_iterations: int = Field(
        default=50,
        description="Iteration cap of the alternating loop",
        ge=1,
    )

    armijo_initial_step: float = Field(
        default=1.0,
        description="First step size tried by the Armijo backtracking line search",
        gt=0.0,
    )

    armijo_shrink: float = Field(
        default=0.5,
        description="Factor applied to the step after each rejected trial",
        gt=0.0,
        lt=1.0,
    )

    armijo_sufficient_increase: float = Field(
        default=1e-4,
        description="Sufficient-increase coefficient of the Armijo condition",
        gt=0.0,
        lt=1.0,
    )

    max_backtracks: int = Field(
        default=50,
        description="Number of step reductions before the line search reports stagnation",
        ge=1,
    )

    pr_plus: bool = Field(
        default=True,
        description="Clamp the Polak-Ribiere parameter at zero (PR+)",
    )

    gradient_tolerance: float = Field(
        default=1e-12,
        description="Riemannian gradient norm below which a point is treated as stationary",
        ge=0.0,
    )

    power_tolerance: float = Field(
        default=1e-6,
        description="Stop the power condensation rounds when the objective improves by less than this",
        gt=0.0,
    )

    max_power_rounds: int = Field(
        default=50,
        description="Cap on the number of condensation rounds of the power stage",
        ge=1,
    )

    power_multistart: bool = Field(
        default=True,
        description="Also start the power stage from every near-vertex allocation and from the best two-user "
        "allocation, keeping the best result",
    )

    stage_order: StageOrder = Field(
        default="theta_w_power",
        description="Order of the three blocks inside one alternating iteration",
    )

    stationarity_ratio: float | None = Field(
        default=1e-3,
        description="After the alternating loop, refine theta and W jointly until both Riemannian gradient norms "
        "are below this fraction of their values at the initial point. If None, the refinement is skipped.",
        gt=0.0,
        lt=1.0,
    )


class SystemConfig(ConfigBaseModel):
    """Unified scenario and solver configuration"""

    system: SystemSection = Field(default_factory=SystemSection)
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    solver: SolverSection = Field(default_factory=SolverSection)

    seed: int = Field(
        default=42,
        description="Seed of the random generator used for channels and initial points",
        ge=0,
        lt=2**64,
    )

    @property
    def n_irs_elements(self) -> int:
        """Elements per IRS, M = M_x * M_y."""
        return self.system.irs_rows * self.system.irs_cols

    @property
    def total_power_w(self) -> float:
        return dbm_to_watts(self.system.total_power_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.system.noise_power_dbm)

    @property
    def weights(self) -> np.ndarray:
        """User weights as an array, defaulting to all ones."""
        if self.system.user_weights is None:
            weights = np.ones(self.system.n_users)
        else:
            weights = np.asarray(self.system.user_weights, dtype=float)
        weights.flags.writeable = False
        return weights

    @property
    def shadowing_std_db(self) -> float:
        return math.sqrt(self.system.shadowing_variance_db2)

    def updated(self, **sections: Mapping[str, Any] | int) -> "SystemConfig":
        """Return a validated copy with some section fields replaced.

        Example:
            cfg.updated(system={"total_power_dbm": 20.0}, seed=7)
        """
        data = self.model_dump()
        for name, value in sections.items():
            if isinstance(value, Mapping):
                data[name] = {**data[name], **value}
            else:
                data[name] = value
        return validate_config(data)


def format_errors(error: ValidationError) -> list[str]:
    violations = []
    for err in error.errors():
        field = ".".join(str(part) for part in err["loc"]) or "config"
        message = err["msg"].removeprefix("Value error, ")
        violations.append(f"{field}: {message}")
    return violations


def validate_config(cfg: SystemConfig | Mapping[str, Any]) -> SystemConfig:
    """Validate a configuration, reporting every violated constraint individually.

    Raises:
        ConfigValidationError: If any invariant fails. ``violations`` names the offending fields.
    """
    data = cfg.model_dump() if isinstance(cfg, SystemConfig) else dict(cfg)
    try:
        return SystemConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(format_errors(e)) from e


def load_yaml_sections(path: str | Path) -> dict[str, Any]:
    """Load a sectioned YAML configuration file into a plain mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigValidationError([f"config: file {path} does not exist"])

    with open(path, "r") as file:
        try:
            data = yaml.safe_load(file)
        except yaml.YAMLError as e:
            raise ConfigValidationError([f"config: {path} is not valid YAML ({e})"]) from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigValidationError([f"config: {path} must contain a mapping of sections"])
    return data


def config_table(config: BaseModel, title: str = "⚙️ Simulation Configuration") -> Table:
    """Render a configuration as a two-column table."""
    table = Table(title=title, show_header=True, header_style="bold green")
    table.add_column("Parameter", style="bold white")
    table.add_column("Value", style="bold cyan")

    def flatten_config(cfg: BaseModel, prefix: str = "") -> list[tuple[str, str]]:
        rows = []
        for field, value in cfg:
            full_field = f"{prefix}.{field}" if prefix else field
            if isinstance(value, BaseModel):
                rows.extend(flatten_config(value, full_field))
            elif isinstance(value, (list, tuple, set)):
                value_str = ", ".join(str(item) for item in value)
                if len(value_str) > 70:
                    value_str = value_str[:70] + "..."
                rows.append((full_field, value_str))
            else:
                rows.append((full_field, str(value)))
        return rows

    for param, value in flatten_config(config):
        table.add_row(param, value)

    return table
