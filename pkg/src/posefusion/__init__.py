"""Fusion of absolute and relative pose estimates with an EKF on SE(3)."""

from .ekf import EkfState, KalmanStepReport, correct, initialize, predict, step
from .lie import GroupPose
from .traj_io import Trajectory
from .uncertainty import BlockDiagonalCovariance, LogCovarianceParams, PoseGaussian

__all__ = [
    "BlockDiagonalCovariance",
    "EkfState",
    "GroupPose",
    "KalmanStepReport",
    "LogCovarianceParams",
    "PoseGaussian",
    "Trajectory",
    "correct",
    "initialize",
    "predict",
    "step",
]

__version__ = "0.1.0"
