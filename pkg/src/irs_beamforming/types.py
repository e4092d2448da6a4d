"""Domain containers shared by every stage of the simulator.

All containers are frozen pydantic models holding read-only numpy arrays, so they can be shared between
threads and processes without copying. Construction validates the feasibility invariants of each block:

- ``PhaseVector``: unit-modulus IRS phase entries (circle manifold point)
- ``BeamMatrix``: unit-norm rows (Oblique manifold point)
- ``PowerVector``: strictly positive powers within the total budget
- ``ChannelSet``: rank-one BS-IRS channels and constant-magnitude IRS-user channels
"""

from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

UNIT_TOLERANCE = 1e-12
RANK_ONE_TOLERANCE = 1e-9


def _readonly(array: np.ndarray, dtype: type, ndim: int, name: str) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    if array.ndim != ndim:
        raise ValueError(f"{name} should have {ndim} dimensions, got {array.ndim}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    array.flags.writeable = False
    return array


class FrozenArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class PhaseVector(FrozenArrayModel):
    """Stacked passive beamformer of all IRSs, length L*M, every entry on the unit circle."""

    theta: np.ndarray

    @field_validator("theta", mode="before")
    @classmethod
    def validate_theta(cls, v: np.ndarray) -> np.ndarray:
        theta = _readonly(v, complex, 1, "theta")
        deviation = np.max(np.abs(np.abs(theta) - 1.0), initial=0.0)
        if deviation > UNIT_TOLERANCE:
            raise ValueError(f"theta entries must have unit modulus (max deviation {deviation:.3e})")
        return theta

    @classmethod
    def from_angles(cls, angles: np.ndarray) -> "PhaseVector":
        """Build a phase vector from phase angles in radians."""
        return cls(theta=np.exp(1j * np.asarray(angles, dtype=float)))

    def per_irs(self, n_irs: int) -> np.ndarray:
        """View the stacked vector as an (L, M) array."""
        return self.theta.reshape(n_irs, -1)

    def __len__(self) -> int:
        return self.theta.shape[0]


class BeamMatrix(FrozenArrayModel):
    """Active beamformer W of shape (K, N); row k is w_k^H and has unit Euclidean norm."""

    w: np.ndarray

    @field_validator("w", mode="before")
    @classmethod
    def validate_w(cls, v: np.ndarray) -> np.ndarray:
        w = _readonly(v, complex, 2, "w")
        deviation = np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0), initial=0.0)
        if deviation > UNIT_TOLERANCE:
            raise ValueError(f"Every row of w must have unit norm (max deviation {deviation:.3e})")
        return w

    @property
    def n_users(self) -> int:
        return self.w.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.w.shape[1]


class PowerVector(FrozenArrayModel):
    """Per-user transmit powers in watts with sum(p) <= budget and p_k > 0."""

    p: np.ndarray
    budget: float

    @field_validator("p", mode="before")
    @classmethod
    def validate_p(cls, v: np.ndarray) -> np.ndarray:
        p = _readonly(v, float, 1, "p")
        if np.any(p <= 0.0):
            raise ValueError("Every user power must be strictly positive")
        return p

    @model_validator(mode="after")
    def validate_budget(self) -> "PowerVector":
        """Validate the total power constraint."""
        if self.budget <= 0.0:
            raise ValueError(f"Power budget must be positive, got {self.budget}")
        total = float(np.sum(self.p))
        if total > self.budget * (1.0 + UNIT_TOLERANCE):
            raise ValueError(f"Total power {total:.6e} W exceeds the budget {self.budget:.6e} W")
        return self

    @classmethod
    def uniform(cls, n_users: int, budget: float) -> "PowerVector":
        """Equal split of the budget across users."""
        return cls(p=np.full(n_users, budget / n_users), budget=budget)


class Placement(FrozenArrayModel):
    """2-D node positions in meters: BS, L IRSs and K users."""

    bs: np.ndarray
    irs: np.ndarray
    users: np.ndarray

    @field_validator("bs", mode="before")
    @classmethod
    def validate_bs(cls, v: np.ndarray) -> np.ndarray:
        bs = _readonly(v, float, 1, "bs")
        if bs.shape != (2,):
            raise ValueError(f"bs position must have shape (2,), got {bs.shape}")
        return bs

    @field_validator("irs", "users", mode="before")
    @classmethod
    def validate_positions(cls, v: np.ndarray) -> np.ndarray:
        positions = _readonly(v, float, 2, "positions")
        if positions.shape[1] != 2:
            raise ValueError(f"positions must have shape (n, 2), got {positions.shape}")
        return positions

    @model_validator(mode="after")
    def validate_distances(self) -> "Placement":
        """Validate that all BS-IRS and IRS-user distances are positive."""
        if np.any(self.bs_irs_distances() <= 0.0):
            raise ValueError("An IRS coincides with the BS")
        if np.any(self.irs_user_distances() <= 0.0):
            raise ValueError("A user coincides with an IRS")
        return self

    def bs_irs_distances(self) -> np.ndarray:
        """Distances from the BS to each IRS, shape (L,)."""
        return np.linalg.norm(self.irs - self.bs, axis=1)

    def irs_user_distances(self) -> np.ndarray:
        """Distances from each IRS to each user, shape (L, K)."""
        return np.linalg.norm(self.irs[:, None, :] - self.users[None, :, :], axis=2)


class ChannelSet(FrozenArrayModel):
    """One channel realization.

    Attributes:
        bs_irs: BS-IRS channels G_l stacked as (L, M, N)
        irs_user: IRS-user channels h_{r,l,k} stacked as (L, K, M)
        gamma: Complex gains of the BS-IRS links, shape (L,)
        rho: Complex gains of the IRS-user links, shape (L, K)
        placement: Positions used to generate gains and angles (None for channels loaded from text)
    """

    bs_irs: np.ndarray
    irs_user: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    placement: Placement | None = None

    @field_validator("bs_irs", "irs_user", mode="before")
    @classmethod
    def validate_channels(cls, v: np.ndarray) -> np.ndarray:
        return _readonly(v, complex, 3, "channel")

    @field_validator("gamma", mode="before")
    @classmethod
    def validate_gamma(cls, v: np.ndarray) -> np.ndarray:
        return _readonly(v, complex, 1, "gamma")

    @field_validator("rho", mode="before")
    @classmethod
    def validate_rho(cls, v: np.ndarray) -> np.ndarray:
        return _readonly(v, complex, 2, "rho")

    @model_validator(mode="after")
    def validate_structure(self) -> "ChannelSet":
        """Validate shapes, the rank-one BS-IRS channels and the steering structure of IRS-user channels."""
        n_irs, n_elements, _ = self.bs_irs.shape
        if self.irs_user.shape[0] != n_irs or self.irs_user.shape[2] != n_elements:
            raise ValueError(
                f"irs_user shape {self.irs_user.shape} does not match bs_irs shape {self.bs_irs.shape}"
            )
        if self.gamma.shape != (n_irs,) or self.rho.shape != self.irs_user.shape[:2]:
            raise ValueError("gain arrays do not match the channel dimensions")

        for index, g in enumerate(self.bs_irs):
            singular_values = np.linalg.svd(g, compute_uv=False)
            if singular_values[0] > 0 and np.any(singular_values[1:] >= RANK_ONE_TOLERANCE * singular_values[0]):
                raise ValueError(f"BS-IRS channel {index} is not rank one")

        magnitudes = np.abs(self.irs_user)
        spread = magnitudes.max(axis=2) - magnitudes.min(axis=2)
        if np.any(spread > UNIT_TOLERANCE * np.maximum(magnitudes.max(axis=2), np.finfo(float).tiny)):
            raise ValueError("IRS-user channels must have entries of equal magnitude")
        return self

    @property
    def n_irs(self) -> int:
        return self.bs_irs.shape[0]

    @property
    def n_elements(self) -> int:
        return self.bs_irs.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.bs_irs.shape[2]

    @property
    def n_users(self) -> int:
        return self.irs_user.shape[1]

    @cached_property
    def cascade(self) -> np.ndarray:
        """Per-user stacked effective-channel operators A_k of shape (K, L*M, N).

        Row (l, m) of A_k is conj(h_{r,l,k}[m]) * G_l[m, :], so that v_k^H = theta^T A_k.
        """
        stacked = np.conj(self.irs_user)[:, :, :, None] * self.bs_irs[:, None, :, :]  # (L, K, M, N)
        cascade = np.transpose(stacked, (1, 0, 2, 3)).reshape(self.n_users, self.n_irs * self.n_elements, -1)
        cascade.flags.writeable = False
        return cascade
