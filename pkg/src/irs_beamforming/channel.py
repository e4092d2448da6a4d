"""Seeded mmWave channel generation for the IRS-assisted downlink.

The BS and the users sit on one horizontal line, the IRSs on a parallel line ``vertical_offset`` meters
away. Every link is line-of-sight and rank one: a complex gain times steering vectors. Gain magnitudes
follow the log-distance path loss ``alpha + beta * log10(d) + xi`` with optional log-normal shadowing,
phases are uniform.
"""

from pathlib import Path

import numpy as np

from irs_beamforming import logger
from irs_beamforming.config import SystemConfig
from irs_beamforming.errors import DimensionMismatchError, PlacementError
from irs_beamforming.types import ChannelSet, Placement

CHANNEL_FILE_HEADER = "# irs-beamforming channel set v1"


def ula_steering(phi: float, n: int) -> np.ndarray:
    """Half-wavelength ULA steering vector with entries exp(j*pi*m*sin(phi)), m = 0..n-1."""
    if n < 1:
        raise ValueError(f"Array size must be at least 1, got {n}")
    phi = float(np.mod(phi, 2 * np.pi))
    return np.exp(1j * np.pi * np.arange(n) * np.sin(phi))


def upa_steering(phi_el: float, theta_az: float, M_x: int, M_y: int) -> np.ndarray:
    """UPA steering vector a_az(theta_az) ⊗ a_el(phi_el) of length M_x * M_y."""
    return np.kron(ula_steering(theta_az, M_x), ula_steering(phi_el, M_y))


def bs_irs_channel(
    gamma: complex,
    phi_r: float,
    theta_r: float,
    phi_t: float,
    M_x: int,
    M_y: int,
    N: int,
) -> np.ndarray:
    """Rank-one BS-IRS channel G = gamma * a_r(phi_r, theta_r) a_t(phi_t)^H of shape (M, N)."""
    a_r = upa_steering(phi_r, theta_r, M_x, M_y)
    a_t = ula_steering(phi_t, N)
    return gamma * np.outer(a_r, np.conj(a_t))


def irs_user_channel(
    rho: complex,
    phi_t: float,
    M_x: int,
    M_y: int,
    theta_t: float | None = None,
) -> np.ndarray:
    """IRS-user channel h = rho * a_t of length M.

    ``phi_t`` is the elevation of the departure direction; the azimuth defaults to the same angle when the
    geometry does not distinguish them.
    """
    return rho * upa_steering(phi_t, phi_t if theta_t is None else theta_t, M_x, M_y)


def path_loss_db(
    d: float | np.ndarray,
    xi: float | np.ndarray = 0.0,
    alpha: float = 61.4,
    beta: float = 20.0,
) -> float | np.ndarray:
    """Log-distance path loss alpha + beta*log10(d) + xi in dB."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError(f"Link distance must be positive, got {d}")
    loss = alpha + beta * np.log10(d) + xi
    return float(loss) if np.ndim(loss) == 0 else loss


def compute_placement(cfg: SystemConfig) -> Placement:
    """Place the BS at the origin, the IRSs equally spaced on the offset line and the users on the BS line."""
    geometry = cfg.geometry
    n_irs, n_users = cfg.system.n_irs, cfg.system.n_users

    if n_irs == 1:
        irs_x = np.array([geometry.bs_irs_distance])
    else:
        irs_x = np.linspace(geometry.bs_irs_distance, geometry.irs_line_end, n_irs)
    irs = np.stack([irs_x, np.full(n_irs, geometry.vertical_offset)], axis=1)

    user_x = geometry.first_user_distance + geometry.user_spacing * np.arange(n_users)
    users = np.stack([user_x, np.zeros(n_users)], axis=1)
    bs = np.zeros(2)

    nodes = np.concatenate([bs[None, :], irs, users])
    distances = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=2)
    np.fill_diagonal(distances, np.inf)
    if np.any(distances <= 0.0):
        first, second = np.argwhere(distances <= 0.0)[0]
        raise PlacementError(f"Nodes {first} and {second} share the position {tuple(nodes[first])}")

    return Placement(bs=bs, irs=irs, users=users)


def _link_gains(distances: np.ndarray, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    shadowing = cfg.shadowing_std_db * rng.standard_normal(distances.shape)
    phases = rng.uniform(0.0, 2 * np.pi, distances.shape)
    loss_db = path_loss_db(distances, shadowing, cfg.system.path_loss_alpha_db, cfg.system.path_loss_beta)
    return 10.0 ** (-np.asarray(loss_db) / 20.0) * np.exp(1j * phases)


def sample_scenario(cfg: SystemConfig, rng: np.random.Generator) -> tuple[Placement, ChannelSet]:
    """Draw one channel realization for the configured geometry.

    Angles follow from the 2-D positions: the IRS elevation angles come from the vertical offset over the
    horizontal distance, azimuth and BS departure angles from the direction between the two nodes.
    Randomness (shadowing and gain phases) is drawn from ``rng`` in a fixed order, so a given seed always
    yields the same realization.
    """
    placement = compute_placement(cfg)
    system = cfg.system
    M_x, M_y, N = system.irs_rows, system.irs_cols, system.n_bs_antennas

    gamma = _link_gains(placement.bs_irs_distances(), cfg, rng)
    rho = _link_gains(placement.irs_user_distances(), cfg, rng)

    bs_irs = []
    irs_user = []
    for l_idx, irs in enumerate(placement.irs):
        to_bs = placement.bs - irs
        phi_t = np.arctan2(-to_bs[1], -to_bs[0])
        theta_r = np.arctan2(to_bs[1], to_bs[0])
        phi_r = np.arctan2(abs(to_bs[1]), abs(to_bs[0]))
        bs_irs.append(bs_irs_channel(gamma[l_idx], phi_r, theta_r, phi_t, M_x, M_y, N))

        links = []
        for k_idx, user in enumerate(placement.users):
            to_user = user - irs
            elevation = np.arctan2(abs(to_user[1]), abs(to_user[0]))
            azimuth = np.arctan2(to_user[1], to_user[0])
            links.append(irs_user_channel(rho[l_idx, k_idx], elevation, M_x, M_y, theta_t=azimuth))
        irs_user.append(links)

    channels = ChannelSet(
        bs_irs=np.stack(bs_irs),
        irs_user=np.array(irs_user),
        gamma=gamma,
        rho=rho,
        placement=placement,
    )
    logger.debug(
        f"Sampled scenario with L={system.n_irs}, K={system.n_users}, M={M_x * M_y}, N={N}; "
        f"|gamma| in [{np.abs(gamma).min():.3e}, {np.abs(gamma).max():.3e}]",
    )
    return placement, channels


def _format_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def dump_channels(channels: ChannelSet, path: str | Path) -> None:
    """Write a channel set as text, one complex entry per whitespace-separated token.

    Layout: a dimension line ``L M N K`` followed by the sections ``gamma`` (L tokens), ``rho`` (L lines of
    K tokens), ``bs_irs`` (L*M lines of N tokens), ``irs_user`` (L*K lines of M tokens) and, when known,
    ``placement`` (BS, IRS and user coordinates, one point per line).
    """
    L, M, N, K = channels.n_irs, channels.n_elements, channels.n_antennas, channels.n_users
    lines = [CHANNEL_FILE_HEADER, f"{L} {M} {N} {K}", "gamma", " ".join(map(_format_complex, channels.gamma))]
    lines.append("rho")
    lines.extend(" ".join(map(_format_complex, row)) for row in channels.rho)
    lines.append("bs_irs")
    lines.extend(" ".join(map(_format_complex, row)) for row in channels.bs_irs.reshape(L * M, N))
    lines.append("irs_user")
    lines.extend(" ".join(map(_format_complex, row)) for row in channels.irs_user.reshape(L * K, M))
    if channels.placement is not None:
        points = np.concatenate([channels.placement.bs[None, :], channels.placement.irs, channels.placement.users])
        lines.append("placement")
        lines.extend(f"{x:.17g} {y:.17g}" for x, y in points)
    Path(path).write_text("\n".join(lines) + "\n")


def load_channels(path: str | Path) -> ChannelSet:
    """Read a channel set written by ``dump_channels``."""
    lines = [line for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    L, M, N, K = (int(token) for token in lines[0].split())
    sections: dict[str, list[list[str]]] = {}
    current = None
    for line in lines[1:]:
        if line in ("gamma", "rho", "bs_irs", "irs_user", "placement"):
            current = sections.setdefault(line, [])
        elif current is None:
            raise DimensionMismatchError(f"Unexpected data before the first section in {path}")
        else:
            current.append(line.split())

    def complex_block(name: str, shape: tuple[int, ...]) -> np.ndarray:
        values = np.array([complex(token) for row in sections[name] for token in row])
        if values.size != int(np.prod(shape)):
            raise DimensionMismatchError(f"Section {name} has {values.size} entries, expected shape {shape}")
        return values.reshape(shape)

    placement = None
    if "placement" in sections:
        points = np.array([[float(x), float(y)] for x, y in sections["placement"]])
        placement = Placement(bs=points[0], irs=points[1 : 1 + L], users=points[1 + L :])

    return ChannelSet(
        bs_irs=complex_block("bs_irs", (L, M, N)),
        irs_user=complex_block("irs_user", (L, K, M)),
        gamma=complex_block("gamma", (L,)),
        rho=complex_block("rho", (L, K)),
        placement=placement,
    )
