from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from irs_beamforming.channel import sample_scenario
from irs_beamforming.config import SystemConfig, validate_config
from irs_beamforming.types import ChannelSet

CONFIGS_DIR = Path(__file__).parents[1] / "configs"


def build_config(
    n_users: int = 2,
    n_irs: int = 1,
    irs_rows: int = 2,
    irs_cols: int = 2,
    n_bs_antennas: int = 4,
    total_power_dbm: float = 30.0,
    seed: int = 42,
    **solver: float | int | bool | str | None,
) -> SystemConfig:
    """A small scenario that keeps solver runs fast."""
    return validate_config(
        {
            "system": {
                "n_bs_antennas": n_bs_antennas,
                "irs_rows": irs_rows,
                "irs_cols": irs_cols,
                "n_irs": n_irs,
                "n_users": n_users,
                "total_power_dbm": total_power_dbm,
            },
            "solver": solver,
            "seed": seed,
        }
    )


@pytest.fixture
def make_config() -> Callable[..., SystemConfig]:
    return build_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_config() -> SystemConfig:
    return build_config(n_users=2, n_irs=2)


@pytest.fixture
def small_channels(small_config: SystemConfig) -> ChannelSet:
    _, channels = sample_scenario(small_config, np.random.default_rng(7))
    return channels


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS_DIR


def random_unit_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    w = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def random_phases(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, size))
