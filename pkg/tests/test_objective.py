import numpy as np
import pytest
from conftest import random_phases, random_unit_rows

from irs_beamforming.channel import sample_scenario
from irs_beamforming.errors import DimensionMismatchError
from irs_beamforming.manifold import CircleManifold, ObliqueManifold
from irs_beamforming.objective import (
    LN2,
    effective_channels,
    fd_gradient,
    grad_theta,
    grad_w,
    sinr,
    user_rates,
    weighted_sum_rate,
    weighted_sum_rate_from_channels,
)


def _relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(actual - expected) / np.linalg.norm(expected))


def test_sinr_by_hand() -> None:
    vh = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=complex)
    w = np.array([[1.0, 0.0], [np.sqrt(0.5), np.sqrt(0.5)]], dtype=complex)
    p = np.array([1.0, 2.0])

    # s = vh @ w^H = [[1, sqrt(.5)], [0, 2 sqrt(.5)]]
    expected = np.array([1.0 / (0.5 * 2.0 + 0.1), 2.0 * 2.0 / (0.0 + 0.1)])
    np.testing.assert_allclose(sinr(vh, w, p, 0.1), expected, rtol=1e-12)


def test_single_user_rate_by_hand(make_config) -> None:
    cfg = make_config(n_users=1)
    _, channels = sample_scenario(cfg, np.random.default_rng(0))
    theta = np.ones(channels.n_irs * channels.n_elements, dtype=complex)
    vh = effective_channels(channels, theta).vh
    w = vh / np.linalg.norm(vh)
    p = np.array([cfg.total_power_w])

    snr = np.linalg.norm(vh) ** 2 * cfg.total_power_w / cfg.noise_power_w
    expected = np.log1p(snr) / np.log(2.0)
    assert weighted_sum_rate(theta, w, p, channels, cfg) == pytest.approx(expected, rel=1e-9)


def test_weights_scale_user_rates(small_channels, make_config, rng) -> None:
    cfg = make_config(n_users=2, n_irs=2).updated(system={"user_weights": [0.5, 2.0]})
    theta = random_phases(rng, 8)
    w = random_unit_rows(rng, 2, 4)
    p = np.array([0.3, 0.7])

    rates = user_rates(theta, w, p, small_channels, cfg)
    assert np.all(rates >= 0)
    assert weighted_sum_rate(theta, w, p, small_channels, cfg) == pytest.approx(0.5 * rates[0] + 2.0 * rates[1])

    vh = effective_channels(small_channels, theta).vh
    from_channels = weighted_sum_rate_from_channels(vh, w, p, cfg.weights, cfg.noise_power_w)
    assert from_channels == pytest.approx(weighted_sum_rate(theta, w, p, small_channels, cfg), rel=1e-12)


def test_sinr_rejects_nonpositive_noise() -> None:
    with pytest.raises(ValueError, match="Noise power"):
        sinr(np.ones((1, 2)), np.array([[1.0, 0.0]]), np.ones(1), 0.0)


def test_shape_mismatch_is_reported(small_channels, small_config) -> None:
    with pytest.raises(DimensionMismatchError, match="theta"):
        weighted_sum_rate(np.ones(3), np.ones((2, 4)) / 2, np.ones(2), small_channels, small_config)
    with pytest.raises(DimensionMismatchError, match="w should"):
        weighted_sum_rate(np.ones(8), np.ones((3, 4)) / 2, np.ones(2), small_channels, small_config)
    with pytest.raises(DimensionMismatchError, match="p should"):
        weighted_sum_rate(np.ones(8), np.ones((2, 4)) / 2, np.ones(3), small_channels, small_config)


@pytest.mark.parametrize(
    ("n_users", "n_irs", "irs_rows", "n_bs_antennas"),
    [(1, 1, 2, 2), (2, 2, 2, 4), (3, 1, 3, 3)],
)
def test_theta_gradient_matches_finite_differences(make_config, n_users, n_irs, irs_rows, n_bs_antennas) -> None:
    cfg = make_config(
        n_users=n_users,
        n_irs=n_irs,
        irs_rows=irs_rows,
        n_bs_antennas=n_bs_antennas,
        total_power_dbm=50.0,
    )
    rng = np.random.default_rng(n_users * 100 + n_irs)
    _, channels = sample_scenario(cfg, rng)
    theta = random_phases(rng, channels.n_irs * channels.n_elements)
    w = random_unit_rows(rng, n_users, n_bs_antennas)
    p = rng.uniform(0.5, 1.0, n_users) * cfg.total_power_w / n_users

    analytic = grad_theta(theta, w, p, channels, cfg)
    numeric = fd_gradient(lambda x: weighted_sum_rate(x, w, p, channels, cfg), theta)
    assert _relative_error(analytic, numeric) < 1e-6


@pytest.mark.parametrize(
    ("n_users", "n_irs", "irs_rows", "n_bs_antennas"),
    [(1, 1, 2, 2), (2, 2, 2, 4), (3, 1, 3, 3)],
)
def test_w_gradient_matches_finite_differences(make_config, n_users, n_irs, irs_rows, n_bs_antennas) -> None:
    cfg = make_config(
        n_users=n_users,
        n_irs=n_irs,
        irs_rows=irs_rows,
        n_bs_antennas=n_bs_antennas,
        total_power_dbm=50.0,
    )
    rng = np.random.default_rng(n_users * 10 + n_irs)
    _, channels = sample_scenario(cfg, rng)
    theta = random_phases(rng, channels.n_irs * channels.n_elements)
    w = random_unit_rows(rng, n_users, n_bs_antennas)
    p = rng.uniform(0.5, 1.0, n_users) * cfg.total_power_w / n_users

    analytic = grad_w(theta, w, p, channels, cfg)
    numeric = fd_gradient(lambda x: weighted_sum_rate(theta, x, p, channels, cfg), w)
    assert _relative_error(analytic, numeric) < 1e-6


@pytest.mark.parametrize("direction", ["gradient", "random"])
def test_riemannian_directional_derivatives(small_channels, small_config, direction) -> None:
    rng = np.random.default_rng(11)
    theta = random_phases(rng, 8)
    w = random_unit_rows(rng, 2, 4)
    p = np.array([0.4, 0.6])
    t = 1e-6
    base_value = weighted_sum_rate(theta, w, p, small_channels, small_config)

    circle = CircleManifold(8)
    g_theta = circle.riemannian_grad(theta, 2 * grad_theta(theta, w, p, small_channels, small_config))
    d_theta = g_theta if direction == "gradient" else circle.random_tangent(theta, rng)
    moved = circle.retract(theta, d_theta, t)
    actual = weighted_sum_rate(moved, w, p, small_channels, small_config) - base_value
    predicted = t * circle.inner(g_theta, d_theta)
    assert abs(actual - predicted) <= 1e-3 * t * circle.norm(g_theta) * circle.norm(d_theta)

    oblique = ObliqueManifold(2, 4)
    g_w = oblique.riemannian_grad(w, 2 * grad_w(theta, w, p, small_channels, small_config))
    d_w = g_w if direction == "gradient" else oblique.random_tangent(w, rng)
    moved_w = oblique.retract(w, d_w, t)
    actual = weighted_sum_rate(theta, moved_w, p, small_channels, small_config) - base_value
    predicted = t * oblique.inner(g_w, d_w)
    assert abs(actual - predicted) <= 1e-3 * t * oblique.norm(g_w) * oblique.norm(d_w)


def test_fd_gradient_of_quadratic() -> None:
    x = np.array([1.0 + 2.0j, -0.5j])
    # f = |x|^2 has Wirtinger gradient x
    gradient = fd_gradient(lambda z: float(np.sum(np.abs(z) ** 2)), x)
    np.testing.assert_allclose(gradient, x, atol=1e-8)

    with pytest.raises(ValueError, match="step"):
        fd_gradient(lambda _: 0.0, x, h=0.0)


def test_rate_uses_base_two() -> None:
    assert np.log1p(1.0) / LN2 == pytest.approx(1.0)


def test_gradients_match_finite_differences_on_random_instances(make_config) -> None:
    rng = np.random.default_rng(314)
    for instance in range(100):
        n_users = int(rng.integers(1, 5))
        n_bs_antennas = int(rng.integers(1, 9))
        cfg = make_config(
            n_users=n_users,
            n_irs=int(rng.integers(1, 3)),
            irs_rows=int(rng.integers(1, 5)),
            irs_cols=2,
            n_bs_antennas=n_bs_antennas,
            total_power_dbm=50.0,
        )
        _, channels = sample_scenario(cfg, rng)
        theta = random_phases(rng, channels.n_irs * channels.n_elements)
        w = random_unit_rows(rng, n_users, n_bs_antennas)
        p = rng.dirichlet(np.ones(n_users)) * cfg.total_power_w

        numeric = fd_gradient(lambda x: weighted_sum_rate(x, w, p, channels, cfg), theta)
        assert _relative_error(grad_theta(theta, w, p, channels, cfg), numeric) < 1e-6, f"instance {instance}"
        numeric = fd_gradient(lambda x: weighted_sum_rate(theta, x, p, channels, cfg), w)
        assert _relative_error(grad_w(theta, w, p, channels, cfg), numeric) < 1e-6, f"instance {instance}"


def test_common_phase_rotation_leaves_rate_unchanged(make_config) -> None:
    cfg = make_config(n_users=3, n_irs=2, irs_rows=3, n_bs_antennas=5, total_power_dbm=50.0)
    rng = np.random.default_rng(5)
    for _ in range(10):
        _, channels = sample_scenario(cfg, rng)
        theta = random_phases(rng, channels.n_irs * channels.n_elements)
        w = random_unit_rows(rng, 3, 5)
        p = rng.dirichlet(np.ones(3)) * cfg.total_power_w
        base_value = weighted_sum_rate(theta, w, p, channels, cfg)
        for phi in rng.uniform(0.0, 2 * np.pi, 5):
            rotated = weighted_sum_rate(np.exp(1j * phi) * theta, w, p, channels, cfg)
            assert abs(rotated - base_value) <= 1e-12


def test_directional_derivative_extrapolates_to_gradient(small_channels, small_config) -> None:
    rng = np.random.default_rng(21)
    theta = random_phases(rng, 8)
    w = random_unit_rows(rng, 2, 4)
    p = np.array([0.4, 0.6])
    base_value = weighted_sum_rate(theta, w, p, small_channels, small_config)

    circle = CircleManifold(8)
    g = circle.riemannian_grad(theta, 2 * grad_theta(theta, w, p, small_channels, small_config))
    d = circle.random_tangent(theta, rng)
    d = d.scaled(1.0 / circle.norm(d))
    expected = circle.inner(g, d)
    scale = circle.norm(g)

    def quotient(t: float) -> float:
        return (weighted_sum_rate(circle.retract(theta, d, t), w, p, small_channels, small_config) - base_value) / t

    coarse, fine = quotient(1e-4), quotient(1e-5)
    extrapolated = (10.0 * fine - coarse) / 9.0
    assert abs(coarse - expected) <= 1e-2 * scale
    assert abs(fine - expected) <= 1e-3 * scale
    assert abs(extrapolated - expected) <= 1e-6 * scale
