import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_pose
from posefusion import lie
from posefusion.lie import GroupPose
from posefusion.uncertainty import (
    EPS,
    BlockDiagonalCovariance,
    LogCovarianceParams,
    PoseGaussian,
    closed_form_variances,
    fit_covariance,
    nll_loss,
    relative_from_absolute,
)

ZERO = LogCovarianceParams(0.0, 0.0)
vec6 = arrays(float, 6, elements=st.floats(-3, 3))


def brute_nll(pred, truth, params):
    """Sum of independent 1-D Gaussian negative log densities, minus the
    constant 0.5*log(2*pi) per component."""
    var = np.exp(np.repeat(params, 3))
    r = np.asarray(pred) - np.asarray(truth)
    logpdf = -0.5 * r ** 2 / var - 0.5 * np.log(2 * np.pi * var)
    return -logpdf.sum() - 3 * np.log(2 * np.pi)


def test_zero_residual_unit_variance_is_zero():
    assert nll_loss(np.ones(6), np.ones(6), ZERO).loss == 0.0


def test_single_unit_residual_contributes_half():
    pred = np.zeros(6)
    pred[4] = 1.0
    assert nll_loss(pred, np.zeros(6), ZERO).loss == 0.5


def test_loss_matches_gaussian_density(rng):
    for _ in range(20):
        p, t, th = rng.normal(size=6), rng.normal(size=6), rng.normal(size=2)
        assert nll_loss(p, t, th).loss == pytest.approx(brute_nll(p, t, th), rel=1e-12)


@pytest.mark.parametrize("r", [0.1, 1.0, 3.0])
def test_optimal_variance_is_squared_residual(r):
    grid = np.linspace(np.log(r * r) - 2, np.log(r * r) + 2, 40001)
    pred = np.array([r, 0, 0, 0, 0, 0])
    # only the translation block varies; component 0 carries the residual
    losses = [0.5 * r * r / np.exp(s) + 0.5 * s for s in grid]
    assert np.exp(grid[int(np.argmin(losses))]) == pytest.approx(r * r, rel=1e-3)
    g = nll_loss(pred, np.zeros(6), np.array([np.log(r * r), 0.0])).grad_params
    # d/ds of the residual component vanishes; the two empty ones add +0.5 each
    assert g[0] == pytest.approx(1.0, abs=1e-12)


def test_gradients_match_finite_differences(rng):
    h = 1e-6
    for _ in range(200):
        p, t, th = rng.normal(size=6), rng.normal(size=6), rng.uniform(-2, 1, 2)
        res = nll_loss(p, t, th)
        for i in range(6):
            d = np.zeros(6)
            d[i] = h
            fd = (nll_loss(p + d, t, th).loss - nll_loss(p - d, t, th).loss) / (2 * h)
            assert res.grad_prediction[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)
            fd_t = (nll_loss(p, t + d, th).loss - nll_loss(p, t - d, th).loss) / (2 * h)
            assert res.grad_truth[i] == pytest.approx(fd_t, rel=1e-6, abs=1e-6)
        for j in range(2):
            d = np.zeros(2)
            d[j] = h
            fd = (nll_loss(p, t, th + d).loss - nll_loss(p, t, th - d).loss) / (2 * h)
            assert res.grad_params[j] == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_batched_loss_matches_loop(rng):
    p, t, th = rng.normal(size=(7, 6)), rng.normal(size=(7, 6)), rng.normal(size=(7, 2))
    res = nll_loss(p, t, th)
    for i in range(7):
        assert res.loss[i] == nll_loss(p[i], t[i], th[i]).loss


@settings(max_examples=100, deadline=None)
@given(vec6, vec6, vec6)
def test_loss_depends_only_on_residual(pred, truth, shift):
    th = np.array([0.3, -1.0])
    a = nll_loss(pred, truth, th).loss
    b = nll_loss(pred + shift, truth + shift, th).loss
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- fitting

def test_fit_all_zero_residuals_clamps_to_floor():
    cov = fit_covariance(np.zeros((10, 6))).to_covariance()
    assert cov.sigma_trans_sq == pytest.approx(EPS)
    assert cov.sigma_rot_sq == pytest.approx(EPS)


def test_fit_single_residual():
    cov = fit_covariance(np.array([[1.0, 1.0, 1.0, 0.1, 0.2, 0.3]])).to_covariance()
    assert cov.sigma_trans_sq == pytest.approx(1.0, rel=1e-9)
    assert cov.sigma_rot_sq == pytest.approx((0.01 + 0.04 + 0.09) / 3, rel=1e-9)


def test_fit_empty_raises():
    with pytest.raises(ValueError):
        fit_covariance(np.zeros((0, 6)))
    with pytest.raises(ValueError):
        fit_covariance(np.ones((3, 6)), learning_rate=0.0)


def test_fit_monte_carlo_recovers_sigma():
    rng = np.random.default_rng(2024)
    r = np.concatenate([rng.normal(0, 0.5, (10000, 3)), rng.normal(0, 0.05, (10000, 3))], axis=1)
    cov = fit_covariance(r).to_covariance()
    assert 0.475 <= np.sqrt(cov.sigma_trans_sq) <= 0.525
    assert 0.0475 <= np.sqrt(cov.sigma_rot_sq) <= 0.0525
    mle = closed_form_variances(r)
    np.testing.assert_allclose([cov.sigma_trans_sq, cov.sigma_rot_sq], mle, rtol=1e-3)


@pytest.mark.parametrize("scale", [1e-4, 1.0, 1e3])
def test_fit_matches_closed_form_across_scales(scale, rng):
    r = rng.normal(0, scale, (500, 6)) * np.repeat([1.0, 0.1], 3)
    cov = fit_covariance(r).to_covariance()
    np.testing.assert_allclose([cov.sigma_trans_sq, cov.sigma_rot_sq],
                               closed_form_variances(r), rtol=1e-3)


def test_fit_minimizes_mean_loss(rng):
    r = rng.normal(0, 0.3, (200, 6))
    th = fit_covariance(r).as_array()
    best = nll_loss(r, 0 * r, th).loss.mean()
    for d in ([0.01, 0], [-0.01, 0], [0, 0.01], [0, -0.01]):
        assert nll_loss(r, 0 * r, th + d).loss.mean() > best


# ---------------------------------------------------------------- covariances

def test_block_covariance_expands():
    np.testing.assert_array_equal(BlockDiagonalCovariance(0.01, 0.001).matrix(),
                                  np.diag([0.01] * 3 + [0.001] * 3))


def test_block_covariance_floor():
    with pytest.raises(ValueError):
        BlockDiagonalCovariance(0.0, 1.0)
    cov = BlockDiagonalCovariance.from_sigmas(0.0, 0.0)
    assert cov.sigma_trans_sq == EPS and cov.sigma_rot_sq == EPS
    assert np.linalg.eigvalsh(cov.matrix()).min() >= EPS


def test_log_params_roundtrip():
    cov = BlockDiagonalCovariance(0.04, 0.0025)
    back = LogCovarianceParams.from_covariance(cov).to_covariance()
    assert back.sigma_trans_sq == pytest.approx(0.04, rel=1e-15)
    assert back.sigma_rot_sq == pytest.approx(0.0025, rel=1e-15)


def test_pose_gaussian_validation():
    g = GroupPose.identity()
    PoseGaussian(g, np.eye(6), "measurement")
    PoseGaussian(g, np.zeros((6, 6)), "control")
    with pytest.raises(ValueError):
        PoseGaussian(g, np.zeros((6, 6)), "state")
    with pytest.raises(ValueError):
        PoseGaussian(g, -np.eye(6), "control")
    asym = np.eye(6)
    asym[0, 1] = 0.1
    with pytest.raises(ValueError):
        PoseGaussian(g, asym, "state")
    with pytest.raises(ValueError):
        PoseGaussian(g, np.eye(6), "banana")


# ---------------------------------------------------------------- relative poses

def test_relative_of_equal_poses_is_zero(rng):
    g = random_pose(rng)
    np.testing.assert_allclose(relative_from_absolute(g, g), 0, atol=1e-12)


def test_relative_from_identity_is_log(rng):
    g = random_pose(rng)
    np.testing.assert_allclose(relative_from_absolute(GroupPose.identity(), g), lie.log(g),
                               atol=1e-15)


def test_relative_roundtrip_many(rng):
    n = 10000
    a = lie.exp(np.concatenate([rng.normal(0, 3, (n, 3)), rng.normal(0, 0.8, (n, 3))], axis=1))
    b = lie.exp(np.concatenate([rng.normal(0, 3, (n, 3)), rng.normal(0, 0.8, (n, 3))], axis=1))
    u = relative_from_absolute(a, b)
    back = lie.oplus(a, u)
    assert np.abs(back.canonical().rotation - b.canonical().rotation).max() < 1e-9
    assert np.abs(back.translation - b.translation).max() < 1e-9
