"""Constraint manifolds of the beamforming blocks.

- ``CircleManifold``: complex vectors with unit-modulus entries (the IRS phase vector)
- ``ObliqueManifold``: complex matrices with unit-norm rows (the BS beamforming matrix)
- ``ProductManifold``: both at once, for the joint phase-and-beamformer polish

Both are embedded in a complex Euclidean space equipped with the real inner product Re<u, v>. Tangent
projection removes the radial component (entrywise for the circle, rowwise for the Oblique manifold),
retraction renormalizes, and the same projection doubles as the vector transport used by conjugate
gradient.
"""

from abc import ABC, abstractmethod

import numpy as np
from pydantic import BaseModel, ConfigDict

from irs_beamforming.errors import DegenerateRetractionError, DimensionMismatchError, TangentSpaceMismatchError
from irs_beamforming.types import BeamMatrix, PhaseVector

DEGENERACY_THRESHOLD = 1e-300


class TangentVector(BaseModel):
    """A tangent vector together with the point it is attached to."""

    data: np.ndarray
    base: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def scaled(self, factor: float) -> "TangentVector":
        return TangentVector(data=factor * self.data, base=self.base)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _check_same_base(self, other)
        return TangentVector(data=self.data + other.data, base=self.base)


def _check_same_base(u: TangentVector, v: TangentVector) -> None:
    if u.base is not v.base and not np.array_equal(u.base, v.base):
        raise TangentSpaceMismatchError("Tangent vectors are attached to different base points")


def _point_array(point: np.ndarray | PhaseVector | BeamMatrix) -> np.ndarray:
    if isinstance(point, PhaseVector):
        return point.theta
    if isinstance(point, BeamMatrix):
        return point.w
    return np.asarray(point, dtype=complex)


def _ambient_array(g: np.ndarray | TangentVector, shape: tuple[int, ...]) -> np.ndarray:
    g = g.data if isinstance(g, TangentVector) else np.asarray(g, dtype=complex)
    if g.shape != shape:
        raise DimensionMismatchError(f"Ambient vector should have shape {shape}, got {g.shape}")
    return g


def project_circle(theta: np.ndarray | PhaseVector, g: np.ndarray | TangentVector) -> TangentVector:
    """Orthogonal projection g - Re(g ∘ theta^*) ∘ theta onto the tangent space of the circle manifold."""
    theta = _point_array(theta)
    g = _ambient_array(g, theta.shape)
    return TangentVector(data=g - np.real(g * np.conj(theta)) * theta, base=theta)


def project_oblique(w: np.ndarray | BeamMatrix, g: np.ndarray | TangentVector) -> TangentVector:
    """Orthogonal projection g - (I ∘ Re{W g^H}) W onto the tangent space of the Oblique manifold."""
    w = _point_array(w)
    g = _ambient_array(g, w.shape)
    radial = np.real(np.sum(w * np.conj(g), axis=1))
    return TangentVector(data=g - radial[:, None] * w, base=w)


def retract_circle(theta: np.ndarray | PhaseVector, d: TangentVector, alpha: float) -> np.ndarray:
    """Entrywise normalization (theta + alpha*d) / |theta + alpha*d|."""
    if alpha < 0.0:
        raise ValueError(f"Retraction step must be nonnegative, got {alpha}")
    theta = _point_array(theta)
    moved = theta + alpha * _ambient_array(d, theta.shape)
    magnitudes = np.abs(moved)
    if np.any(magnitudes <= DEGENERACY_THRESHOLD):
        raise DegenerateRetractionError(f"Step {alpha} sends {np.sum(magnitudes <= DEGENERACY_THRESHOLD)} entries to 0")
    return moved / magnitudes


def retract_oblique(w: np.ndarray | BeamMatrix, d: TangentVector, beta: float) -> np.ndarray:
    """Rowwise normalization (w_k + beta*d_k) / ||w_k + beta*d_k||."""
    if beta < 0.0:
        raise ValueError(f"Retraction step must be nonnegative, got {beta}")
    w = _point_array(w)
    moved = w + beta * _ambient_array(d, w.shape)
    norms = np.linalg.norm(moved, axis=1)
    if np.any(norms <= DEGENERACY_THRESHOLD):
        raise DegenerateRetractionError(f"Step {beta} sends {np.sum(norms <= DEGENERACY_THRESHOLD)} rows to 0")
    return moved / norms[:, None]


class Manifold(ABC):
    """A constraint set the conjugate-gradient solver can move on."""

    shape: tuple[int, ...]

    def check_shape(self, shape: tuple[int, ...]) -> None:
        if tuple(shape) != self.shape:
            raise DimensionMismatchError(f"{self} expects arrays of shape {self.shape}, got {tuple(shape)}")

    @abstractmethod
    def project(self, point: np.ndarray, g: np.ndarray | TangentVector) -> TangentVector:
        """Project an ambient vector onto the tangent space at ``point``."""

    @abstractmethod
    def retract(self, point: np.ndarray, d: TangentVector, step: float) -> np.ndarray:
        """Move from ``point`` along ``d`` by ``step`` and map back onto the manifold."""

    @abstractmethod
    def feasibility_error(self, point: np.ndarray) -> float:
        """Largest violation of the manifold constraint at ``point``."""

    @abstractmethod
    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a point on the manifold."""

    def inner(self, u: TangentVector, v: TangentVector) -> float:
        """Embedded metric Re<u, v>."""
        _check_same_base(u, v)
        return float(np.real(np.vdot(u.data, v.data)))

    def norm(self, u: TangentVector) -> float:
        return float(np.linalg.norm(u.data))

    def riemannian_grad(self, point: np.ndarray, euclidean_grad: np.ndarray) -> TangentVector:
        """Riemannian gradient of the embedded metric: the tangent projection of the Euclidean gradient."""
        self.check_shape(np.shape(euclidean_grad))
        return self.project(point, euclidean_grad)

    def random_tangent(self, point: np.ndarray, rng: np.random.Generator) -> TangentVector:
        ambient = rng.standard_normal(self.shape) + 1j * rng.standard_normal(self.shape)
        return self.project(point, ambient)


class CircleManifold(Manifold):
    """Unit-modulus complex vectors of length ``dim``."""

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"Circle manifold dimension must be positive, got {dim}")
        self.dim = dim
        self.shape = (dim,)

    def __repr__(self) -> str:
        return f"CircleManifold(dim={self.dim})"

    def project(self, point: np.ndarray, g: np.ndarray | TangentVector) -> TangentVector:
        self.check_shape(np.shape(_point_array(point)))
        return project_circle(point, g)

    def retract(self, point: np.ndarray, d: TangentVector, step: float) -> np.ndarray:
        return retract_circle(point, d, step)

    def feasibility_error(self, point: np.ndarray) -> float:
        return float(np.max(np.abs(np.abs(point) - 1.0)))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return np.exp(1j * rng.uniform(0.0, 2 * np.pi, self.dim))


class ObliqueManifold(Manifold):
    """Complex ``rows`` x ``cols`` matrices with unit-norm rows."""

    def __init__(self, rows: int, cols: int) -> None:
        if rows < 1 or cols < 1:
            raise ValueError(f"Oblique manifold dimensions must be positive, got ({rows}, {cols})")
        self.rows = rows
        self.cols = cols
        self.shape = (rows, cols)

    def __repr__(self) -> str:
        return f"ObliqueManifold(rows={self.rows}, cols={self.cols})"

    def project(self, point: np.ndarray, g: np.ndarray | TangentVector) -> TangentVector:
        self.check_shape(np.shape(_point_array(point)))
        return project_oblique(point, g)

    def retract(self, point: np.ndarray, d: TangentVector, step: float) -> np.ndarray:
        return retract_oblique(point, d, step)

    def feasibility_error(self, point: np.ndarray) -> float:
        return float(np.max(np.abs(np.linalg.norm(point, axis=1) - 1.0)))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        ambient = rng.standard_normal(self.shape) + 1j * rng.standard_normal(self.shape)
        return ambient / np.linalg.norm(ambient, axis=1, keepdims=True)


def riemannian_grad(kind: Manifold, point: np.ndarray, euclid_grad: np.ndarray) -> TangentVector:
    """Riemannian gradient P_point(euclid_grad) on the given manifold."""
    kind.check_shape(np.shape(_point_array(point)))
    return kind.riemannian_grad(point, euclid_grad)


def inner(kind: Manifold, u: TangentVector, v: TangentVector) -> float:
    """Real inner product Re<u, v> of two tangent vectors at the same point."""
    return kind.inner(u, v)


class ProductManifold(Manifold):
    """Cartesian product of manifolds, with points stored as one flat complex vector.

    Each factor occupies a contiguous slice of the vector in the order given. The metric is the sum of the
    factor metrics, so projection and retraction act factor by factor.
    """

    def __init__(self, *factors: Manifold) -> None:
        if not factors:
            raise ValueError("Product manifold needs at least one factor")
        self.factors = factors
        sizes = [int(np.prod(factor.shape)) for factor in factors]
        self._bounds = np.cumsum([0, *sizes])
        self.shape = (int(self._bounds[-1]),)

    def __repr__(self) -> str:
        return f"ProductManifold({', '.join(repr(factor) for factor in self.factors)})"

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        """Views of ``x`` reshaped to the factor shapes."""
        x = np.asarray(x)
        self.check_shape(x.shape)
        return [
            x[start:stop].reshape(factor.shape)
            for factor, start, stop in zip(self.factors, self._bounds[:-1], self._bounds[1:], strict=True)
        ]

    def join(self, parts: list[np.ndarray]) -> np.ndarray:
        if len(parts) != len(self.factors):
            raise DimensionMismatchError(f"{self} has {len(self.factors)} factors, got {len(parts)} parts")
        for factor, part in zip(self.factors, parts, strict=True):
            factor.check_shape(np.shape(part))
        return np.concatenate([np.asarray(part, dtype=complex).ravel() for part in parts])

    def project(self, point: np.ndarray, g: np.ndarray | TangentVector) -> TangentVector:
        point = np.asarray(point, dtype=complex)
        g = _ambient_array(g, self.shape)
        pieces = zip(self.factors, self.split(point), self.split(g), strict=True)
        data = self.join([factor.project(x, gx).data for factor, x, gx in pieces])
        return TangentVector(data=data, base=point)

    def retract(self, point: np.ndarray, d: TangentVector, step: float) -> np.ndarray:
        point = np.asarray(point, dtype=complex)
        d_array = _ambient_array(d, self.shape)
        pieces = zip(self.factors, self.split(point), self.split(d_array), strict=True)
        return self.join([factor.retract(x, TangentVector(data=dx, base=x), step) for factor, x, dx in pieces])

    def feasibility_error(self, point: np.ndarray) -> float:
        return max(factor.feasibility_error(x) for factor, x in zip(self.factors, self.split(point), strict=True))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return self.join([factor.random_point(rng) for factor in self.factors])


ManifoldKind = CircleManifold | ObliqueManifold | ProductManifold
