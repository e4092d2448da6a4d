"""Weighted sum-rate of the IRS-assisted downlink and its Wirtinger gradients.

Notation used throughout:

- ``vh``: effective channels, shape (K, N), row k is v_k^H = sum_l h_{r,l,k}^H diag(theta_l) G_l
- ``w``: beamforming matrix, shape (K, N), row i is w_i^H, so the gain of beam i at user k is
  s_{k,i} = v_k^H w_i = (vh @ w^H)[k, i]
- ``T_k = sum_i |s_{k,i}|^2 p_i + sigma^2`` (total received power) and ``J_k = T_k - |s_{k,k}|^2 p_k``
  (interference plus noise), so that R_k = log2(T_k / J_k)

The gradients returned here are Wirtinger derivatives df/dx* of the real objective. Under the real inner
product Re<u, v> used by the manifold layer, the Euclidean gradient is twice that.
"""

from collections.abc import Callable

import numpy as np

from irs_beamforming.config import SystemConfig
from irs_beamforming.errors import DimensionMismatchError
from irs_beamforming.types import BeamMatrix, ChannelSet, FrozenArrayModel, PhaseVector, PowerVector

LN2 = np.log(2.0)


def _theta_array(theta: np.ndarray | PhaseVector, channels: ChannelSet) -> np.ndarray:
    theta = theta.theta if isinstance(theta, PhaseVector) else np.asarray(theta, dtype=complex)
    expected = channels.n_irs * channels.n_elements
    if theta.shape != (expected,):
        raise DimensionMismatchError(f"theta should have shape ({expected},), got {theta.shape}")
    return theta


def _w_array(w: np.ndarray | BeamMatrix, n_users: int, n_antennas: int) -> np.ndarray:
    w = w.w if isinstance(w, BeamMatrix) else np.asarray(w, dtype=complex)
    if w.shape != (n_users, n_antennas):
        raise DimensionMismatchError(f"w should have shape ({n_users}, {n_antennas}), got {w.shape}")
    return w


def _p_array(p: np.ndarray | PowerVector, n_users: int) -> np.ndarray:
    p = p.p if isinstance(p, PowerVector) else np.asarray(p, dtype=float)
    if p.shape != (n_users,):
        raise DimensionMismatchError(f"p should have shape ({n_users},), got {p.shape}")
    return p


class EffectiveChannels(FrozenArrayModel):
    """Effective BS-user channels for one phase vector; row k of ``vh`` is v_k^H."""

    vh: np.ndarray

    @property
    def n_users(self) -> int:
        return self.vh.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.vh.shape[1]


def effective_channels(channels: ChannelSet, theta: np.ndarray | PhaseVector) -> EffectiveChannels:
    """Compute v_k^H = sum_l h_{r,l,k}^H diag(theta_l) G_l for every user."""
    theta = _theta_array(theta, channels).reshape(channels.n_irs, channels.n_elements)
    vh = np.einsum("lkm,lm,lmn->kn", np.conj(channels.irs_user), theta, channels.bs_irs)
    vh.flags.writeable = False
    return EffectiveChannels(vh=vh)


def effective_channels_cascade(channels: ChannelSet, theta: np.ndarray | PhaseVector) -> np.ndarray:
    """Same channels through the identity h^H diag(theta) G = theta^T diag(h^*) G over the stacked theta."""
    theta = _theta_array(theta, channels)
    return np.einsum("j,kjn->kn", theta, channels.cascade)


def beam_gains(vh: np.ndarray, w: np.ndarray) -> np.ndarray:
    """s_{k,i} = v_k^H w_i for all user/beam pairs."""
    return vh @ np.conj(w).T


def _powers(gains: np.ndarray, p: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    squared = np.abs(gains) ** 2
    cross = squared - np.diag(np.diag(squared))
    interference = cross @ p + sigma2
    total = interference + np.diag(squared) * p
    return total, interference


def sinr(
    eff: EffectiveChannels | np.ndarray,
    w: np.ndarray | BeamMatrix,
    p: np.ndarray | PowerVector,
    sigma2: float,
) -> np.ndarray:
    """Per-user SINR |v_k^H w_k|^2 p_k / (sum_{i!=k} |v_k^H w_i|^2 p_i + sigma^2)."""
    if sigma2 <= 0.0:
        raise ValueError(f"Noise power must be positive, got {sigma2}")
    vh = eff.vh if isinstance(eff, EffectiveChannels) else np.asarray(eff)
    n_users, n_antennas = vh.shape
    w = _w_array(w, n_users, n_antennas)
    p = _p_array(p, n_users)

    squared = np.abs(beam_gains(vh, w)) ** 2
    signal = np.diag(squared) * p
    interference = (squared - np.diag(np.diag(squared))) @ p
    return signal / (interference + sigma2)


def user_rates(
    theta: np.ndarray | PhaseVector,
    w: np.ndarray | BeamMatrix,
    p: np.ndarray | PowerVector,
    channels: ChannelSet,
    cfg: SystemConfig,
) -> np.ndarray:
    """Per-user achievable rates log2(1 + SINR_k) in bits/s/Hz."""
    eff = effective_channels(channels, theta)
    return np.log1p(sinr(eff, w, p, cfg.noise_power_w)) / LN2


def weighted_sum_rate(
    theta: np.ndarray | PhaseVector,
    w: np.ndarray | BeamMatrix,
    p: np.ndarray | PowerVector,
    channels: ChannelSet,
    cfg: SystemConfig,
) -> float:
    """Weighted sum-rate sum_k omega_k log2(1 + SINR_k) in bits/s/Hz."""
    return float(cfg.weights @ user_rates(theta, w, p, channels, cfg))


def weighted_sum_rate_from_channels(
    vh: np.ndarray,
    w: np.ndarray,
    p: np.ndarray,
    weights: np.ndarray,
    sigma2: float,
) -> float:
    """Weighted sum-rate for precomputed effective channels (the beamforming-stage objective)."""
    return float(weights @ np.log1p(sinr(vh, w, p, sigma2))) / LN2


def grad_theta(
    theta: np.ndarray | PhaseVector,
    w: np.ndarray | BeamMatrix,
    p: np.ndarray | PowerVector,
    channels: ChannelSet,
    cfg: SystemConfig,
) -> np.ndarray:
    """Wirtinger gradient df/dtheta* of the weighted sum-rate over the stacked phase vector.

    Per user, the derivative of log T_k (all beams) minus the derivative of log J_k (interfering beams
    only), each scaled by 1/ln 2.
    """
    theta = _theta_array(theta, channels)
    n_users, n_antennas = channels.n_users, channels.n_antennas
    w = _w_array(w, n_users, n_antennas)
    p = _p_array(p, n_users)
    weights = cfg.weights

    # b_{k,i} = A_k w_i, so that s_{k,i} = theta^T b_{k,i}
    projected = np.einsum("kjn,in->kji", channels.cascade, np.conj(w))
    gains = np.einsum("j,kji->ki", theta, projected)
    total, interference = _powers(gains, p, cfg.noise_power_w)

    off_diagonal = 1.0 - np.eye(n_users)
    coefficients = (
        weights[:, None]
        * p[None, :]
        * gains
        * (1.0 / total[:, None] - off_diagonal / interference[:, None])
    )
    return np.einsum("ki,kji->j", coefficients, np.conj(projected)) / LN2


def grad_w_from_channels(
    vh: np.ndarray,
    w: np.ndarray,
    p: np.ndarray,
    weights: np.ndarray,
    sigma2: float,
) -> np.ndarray:
    """Wirtinger gradient df/dW* for precomputed effective channels."""
    n_users = vh.shape[0]
    gains = beam_gains(vh, w)
    total, interference = _powers(gains, p, sigma2)

    off_diagonal = 1.0 - np.eye(n_users)
    coefficients = (
        weights[:, None]
        * p[None, :]
        * np.conj(gains)
        * (1.0 / total[:, None] - off_diagonal / interference[:, None])
    )
    # row i collects sum_k coefficients[k, i] * v_k^H
    return coefficients.T @ vh / LN2


def grad_w(
    theta: np.ndarray | PhaseVector,
    w: np.ndarray | BeamMatrix,
    p: np.ndarray | PowerVector,
    channels: ChannelSet,
    cfg: SystemConfig,
) -> np.ndarray:
    """Wirtinger gradient df/dW* of the weighted sum-rate, shape (K, N).

    Row i combines the signal term of user i with the interference penalty that beam i causes at the
    other users.
    """
    eff = effective_channels(channels, theta)
    w = _w_array(w, channels.n_users, channels.n_antennas)
    p = _p_array(p, channels.n_users)
    return grad_w_from_channels(eff.vh, w, p, cfg.weights, cfg.noise_power_w)


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Wirtinger gradient (df/dRe x + j df/dIm x) / 2."""
    if h <= 0.0:
        raise ValueError(f"Finite-difference step must be positive, got {h}")
    x = np.array(x, dtype=complex)
    gradient = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        d_real = (f(x + step) - f(x - step)) / (2 * h)
        d_imag = (f(x + 1j * step) - f(x - 1j * step)) / (2 * h)
        gradient[index] = (d_real + 1j * d_imag) / 2
    return gradient
