"""Gaussian pose distributions, heteroscedastic NLL loss and variance fitting.

Estimator outputs carry one variance for the translation block and one for
the rotation block::

    Sigma = diag(s_trans^2 * I3, s_rot^2 * I3)

parameterized through log-variances so positivity is structural. The loss
for a tangent residual r is::

    L = sum_i 0.5 * r_i^2 / s_i^2 + 0.5 * log(s_i^2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lie
from .lie import GroupPose

EPS = 1e-12
ROLES = ("measurement", "control", "state")

# Tangent components belonging to each variance block.
_BLOCKS = (slice(0, 3), slice(3, 6))


@dataclass(frozen=True)
class BlockDiagonalCovariance:
    sigma_trans_sq: float
    sigma_rot_sq: float

    def __post_init__(self):
        for name in ("sigma_trans_sq", "sigma_rot_sq"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < EPS:
                raise ValueError(f"{name} must be finite and >= {EPS}, got {value}")

    @classmethod
    def from_sigmas(cls, sigma_trans: float, sigma_rot: float) -> "BlockDiagonalCovariance":
        """Build from standard deviations, clamping variances at the floor."""
        return cls(max(float(sigma_trans) ** 2, EPS), max(float(sigma_rot) ** 2, EPS))

    def matrix(self) -> np.ndarray:
        return np.diag([self.sigma_trans_sq] * 3 + [self.sigma_rot_sq] * 3)

    def variances(self) -> np.ndarray:
        """Per-component variances as a 6-vector."""
        return np.repeat([self.sigma_trans_sq, self.sigma_rot_sq], 3)


@dataclass(frozen=True)
class LogCovarianceParams:
    log_sigma_trans_sq: float
    log_sigma_rot_sq: float

    def __post_init__(self):
        if not (np.isfinite(self.log_sigma_trans_sq) and np.isfinite(self.log_sigma_rot_sq)):
            raise ValueError("log-variance parameters must be finite")

    @classmethod
    def from_covariance(cls, cov: BlockDiagonalCovariance) -> "LogCovarianceParams":
        return cls(float(np.log(cov.sigma_trans_sq)), float(np.log(cov.sigma_rot_sq)))

    def as_array(self) -> np.ndarray:
        return np.array([self.log_sigma_trans_sq, self.log_sigma_rot_sq])

    def to_covariance(self) -> BlockDiagonalCovariance:
        return BlockDiagonalCovariance(
            max(float(np.exp(self.log_sigma_trans_sq)), EPS),
            max(float(np.exp(self.log_sigma_rot_sq)), EPS))


def check_covariance(cov, *, strict: bool = True, name: str = "covariance") -> np.ndarray:
    """Validate a 6x6 covariance and return it as a float array.

    ``strict`` requires min eigenvalue >= EPS (up to roundoff); otherwise only positive
    semi-definiteness (up to roundoff) is required.
    """
    cov = np.array(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError(f"{name} must be 6x6, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    # eigensolver roundoff is ~n * machine eps * |cov|
    floor = EPS * (1.0 - 1e-6) - 1e-14 * scale if strict else -1e-12 * scale
    if min_eig < floor:
        kind = "positive definite" if strict else "positive semi-definite"
        raise ValueError(f"{name} is not {kind} (min eigenvalue {min_eig:.3e})")
    return cov


@dataclass(frozen=True, eq=False)
class PoseGaussian:
    """A pose distribution: group mean plus a 6x6 covariance in the
    right-perturbation tangent frame of the mean.

    Controls may carry a merely semi-definite covariance (an exact control
    has zero covariance); measurement and state covariances must be
    positive definite.
    """

    mean: GroupPose
    covariance: np.ndarray
    role: str = "state"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.mean.shape != ():
            raise ValueError("PoseGaussian holds a single pose")
        cov = check_covariance(self.covariance, strict=self.role != "control",
                               name=f"{self.role} covariance")
        cov.flags.writeable = False
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_block(cls, mean: GroupPose, cov: BlockDiagonalCovariance,
                   role: str = "measurement") -> "PoseGaussian":
        return cls(mean, cov.matrix(), role)

    def with_role(self, role: str) -> "PoseGaussian":
        return PoseGaussian(self.mean, self.covariance, role)


@dataclass(frozen=True)
class NllResult:
    """Loss and analytic gradients.

    ``grad_prediction`` has the shape of the residual; ``grad_params`` is
    ordered (log_sigma_trans_sq, log_sigma_rot_sq). Both carry the batch
    shape of the inputs.
    """

    loss: np.ndarray
    grad_prediction: np.ndarray
    grad_params: np.ndarray

    @property
    def grad_truth(self) -> np.ndarray:
        return -self.grad_prediction


def nll_loss(prediction, truth, params: LogCovarianceParams | np.ndarray) -> NllResult:
    """Gaussian negative log-likelihood of ``truth`` under a prediction.

    ``prediction`` and ``truth`` are (..., 6) tangent vectors; the residual
    is their componentwise difference. ``params`` is either a
    :class:`LogCovarianceParams` or a (..., 2) array of log-variances.
    """
    r = np.asarray(prediction, dtype=float) - np.asarray(truth, dtype=float)
    if isinstance(params, LogCovarianceParams):
        params = params.as_array()
    params = np.asarray(params, dtype=float)
    log_var = np.repeat(params, 3, axis=-1)
    inv_var = np.exp(-log_var)
    sq = r * r * inv_var
    loss = 0.5 * np.sum(sq + log_var, axis=-1)
    grad_pred = r * inv_var
    per_comp = 0.5 - 0.5 * sq
    grad_params = np.stack([per_comp[..., b].sum(axis=-1) for b in _BLOCKS], axis=-1)
    return NllResult(loss, grad_pred, grad_params)


def fit_covariance(residuals, learning_rate: float = 0.5, iterations: int = 2000,
                   tol: float = 1e-12) -> LogCovarianceParams:
    """Fit block log-variances to fixed residuals by gradient descent on the
    mean NLL.

    The objective is convex in the log-variances. Each block starts at the
    log of its largest squared residual, an upper bound on the optimum, so
    the descent approaches from above where the gradient is bounded by 1.5
    and ``learning_rate <= 2/3`` cannot overshoot.
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 1:
        r = r[None, :]
    if r.shape[0] == 0:
        raise ValueError("fit_covariance needs at least one residual")
    if r.shape[-1] != 6:
        raise ValueError(f"residuals must be (N, 6), got {r.shape}")
    if not learning_rate > 0:
        raise ValueError("learning_rate must be positive")
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite")

    log_floor = np.log(EPS)
    sq = r * r
    start = np.array([sq[:, b].max() for b in _BLOCKS])
    degenerate = start < EPS
    params = np.log(np.maximum(start, EPS))
    zeros = np.zeros_like(r)
    for _ in range(iterations):
        grad = nll_loss(r, zeros, params).grad_params.mean(axis=0)
        grad[degenerate] = 0.0
        params = np.maximum(params - learning_rate * grad, log_floor)
        if np.max(np.abs(grad)) < tol:
            break
    return LogCovarianceParams(float(params[0]), float(params[1]))


def closed_form_variances(residuals) -> np.ndarray:
    """Per-block maximum-likelihood variances (mean squared residual)."""
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    return np.array([max(float(np.mean(r[:, b] ** 2)), EPS) for b in _BLOCKS])


def relative_from_absolute(z_prev: GroupPose, z_curr: GroupPose, *, report: bool = False):
    """Relative motion u with ``oplus(z_prev, u) == z_curr``."""
    return lie.ominus(z_curr, z_prev, report=report)


def pose_residual(prediction: GroupPose, truth: GroupPose) -> np.ndarray:
    """Tangent-chart residual between a predicted and a true pose."""
    return lie.ominus(prediction, truth)
