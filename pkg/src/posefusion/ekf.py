"""Extended Kalman filter on SE(3).

Relative-pose estimates drive the prediction, absolute-pose estimates the
correction. With right perturbations the process model ``f(x, u) = x * U``
has the closed-form Jacobian ``F = Ad(U^-1)`` and the identity measurement
model has ``H = I``.

States are immutable; :func:`predict`, :func:`correct` and :func:`step`
return a new :class:`EkfState` together with a :class:`KalmanStepReport`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy.integrate import trapezoid

from . import lie
from .errors import FilterStateError, NumericalError
from .lie import GroupPose
from .uncertainty import EPS, PoseGaussian

I6 = np.eye(6)
REGULARIZER = 1e-12


@dataclass(frozen=True)
class EkfState:
    estimate: PoseGaussian | None = None
    step_index: int = 0

    @property
    def initialized(self) -> bool:
        return self.estimate is not None

    @property
    def mean(self) -> GroupPose:
        return self._require().mean

    @property
    def covariance(self) -> np.ndarray:
        return self._require().covariance

    def _require(self) -> PoseGaussian:
        if self.estimate is None:
            raise FilterStateError("filter is not initialized")
        return self.estimate


@dataclass(frozen=True)
class KalmanStepReport:
    """Audit record of one filter step.

    ``prior`` is the predicted distribution (equal to ``posterior`` on a
    predict-only step) and ``previous`` the estimate before prediction.
    Prediction fields are None for a correction-only update; correction
    fields are None when the step had no measurement.
    """

    prior: PoseGaussian
    posterior: PoseGaussian
    previous: PoseGaussian | None = None
    transition_jacobian: np.ndarray | None = None
    measurement_jacobian: np.ndarray | None = None
    gain: np.ndarray | None = None
    residual: np.ndarray | None = None
    innovation_covariance: np.ndarray | None = None

    @property
    def measurement_free(self) -> bool:
        return self.gain is None


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _floor_eigenvalues(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(P)
    if w[0] >= EPS:
        return P
    return _symmetrize((V * np.maximum(w, EPS)) @ V.T)


def _state(mean: GroupPose, cov: np.ndarray) -> PoseGaussian:
    return PoseGaussian(mean, _floor_eigenvalues(_symmetrize(cov)), "state")


def transition_jacobian(control: GroupPose) -> np.ndarray:
    """Jacobian of ``x -> x * U`` w.r.t. a right perturbation of x."""
    return lie.adjoint(lie.inverse(control))


def measurement_jacobian() -> np.ndarray:
    return I6.copy()


def initialize(state: EkfState, first_measurement: PoseGaussian) -> EkfState:
    if state.initialized:
        raise FilterStateError("filter is already initialized")
    if first_measurement.role != "measurement":
        raise ValueError(f"initialize expects a measurement, got role {first_measurement.role!r}")
    return EkfState(first_measurement.with_role("state"), 0)


def predict(state: EkfState, control: PoseGaussian) -> tuple[EkfState, KalmanStepReport]:
    """Propagate through a relative motion: ``x- = x (+) u``,
    ``P- = F P F^T + Sigma_u``."""
    prior = state._require()
    if control.role != "control":
        raise ValueError(f"predict expects a control, got role {control.role!r}")
    F = transition_jacobian(control.mean)
    mean = lie.compose(prior.mean, control.mean)
    cov = F @ prior.covariance @ F.T + control.covariance
    predicted = _state(mean, cov)
    report = KalmanStepReport(prior=predicted, posterior=predicted, previous=prior,
                              transition_jacobian=F)
    return EkfState(predicted, state.step_index + 1), report


def _cholesky(S: np.ndarray):
    try:
        return sla.cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return sla.cho_factor(S + REGULARIZER * np.eye(len(S)), lower=True)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(S)
        raise NumericalError(
            f"innovation covariance is not positive definite after "
            f"regularization (condition number {cond:.3e})") from None


def correct(state: EkfState, measurement: PoseGaussian) -> tuple[EkfState, KalmanStepReport]:
    """Fuse an absolute pose measurement.

    The covariance update uses the Joseph form, which equals ``(I - K H) P``
    at the optimal gain but stays symmetric positive definite under
    roundoff.
    """
    prior = state._require()
    if measurement.role != "measurement":
        raise ValueError(f"correct expects a measurement, got role {measurement.role!r}")
    H = I6
    P = prior.covariance
    R = measurement.covariance
    r = lie.ominus(measurement.mean, prior.mean)
    S = _symmetrize(H @ P @ H.T + R)
    factor = _cholesky(S)
    # K = P H^T S^-1, solved as S K^T = H P
    K = sla.cho_solve(factor, H @ P).T
    if not np.all(np.isfinite(K)):
        raise NumericalError("Kalman gain is not finite")
    A = I6 - K @ H
    cov = A @ P @ A.T + K @ R @ K.T
    posterior = _state(lie.oplus(prior.mean, K @ r), cov)
    report = KalmanStepReport(
        prior=prior, posterior=posterior, measurement_jacobian=H.copy(),
        gain=K, residual=r, innovation_covariance=S)
    return replace(state, estimate=posterior), report


def step(state: EkfState, control: PoseGaussian,
         measurement: PoseGaussian | None = None) -> tuple[EkfState, KalmanStepReport]:
    """Predict with ``control``, then correct if a measurement is given."""
    predicted, pred_report = predict(state, control)
    if measurement is None:
        return predicted, pred_report
    corrected, corr_report = correct(predicted, measurement)
    return corrected, replace(corr_report, previous=pred_report.previous,
                              transition_jacobian=pred_report.transition_jacobian)


def bayes_grid_oracle(prior_mean: float, prior_var: float, meas_mean: float,
                      meas_var: float, grid_halfwidth: float = 10.0,
                      grid_points: int = 20001) -> tuple[float, float]:
    """Posterior mean and variance of a scalar Gaussian prior times a
    Gaussian likelihood, by brute-force quadrature on a uniform grid.

    The grid is centred midway between the two means. Independent of any
    Kalman algebra, so it can check the filter's correction.
    """
    if prior_var <= 0 or meas_var <= 0:
        raise ValueError("variances must be positive")
    if grid_points < 1001:
        raise ValueError("grid_points must be at least 1001")
    center = 0.5 * (prior_mean + meas_mean)
    x = np.linspace(center - grid_halfwidth, center + grid_halfwidth, grid_points)
    spacing = x[1] - x[0]
    if min(math.sqrt(prior_var), math.sqrt(meas_var)) < 3.0 * spacing:
        raise ValueError(
            f"grid spacing {spacing:.3e} too coarse for standard deviation "
            f"{min(math.sqrt(prior_var), math.sqrt(meas_var)):.3e}")
    log_p = (-0.5 * (x - prior_mean) ** 2 / prior_var
             - 0.5 * (x - meas_mean) ** 2 / meas_var)
    p = np.exp(log_p - log_p.max())
    if max(p[0], p[-1]) > 1e-12:
        raise ValueError("grid does not cover the posterior mass; widen grid_halfwidth")
    z = trapezoid(p, x)
    mean = trapezoid(x * p, x) / z
    var = trapezoid((x - mean) ** 2 * p, x) / z
    return float(mean), float(var)
