"""Synthetic ground truth and noisy stand-ins for the pose estimators.

Noise is injected in the tangent chart at the true pose (right
perturbation), the same chart the filter and the losses use, so a
calibrated emitter reports exactly the covariance it samples from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lie
from .lie import GroupPose
from .traj_io import DEFAULT_RATE, Trajectory
from .uncertainty import BlockDiagonalCovariance, PoseGaussian

KINDS = ("straight", "circle", "figure-eight", "random-walk")
ROLE_TAGS = {"truth": 1, "absolute": 2, "relative": 3}


def sub_rng(seed: int, role: str, run: int = 0) -> np.random.Generator:
    """Independent generator for (seed, role, run); PCG64 + ziggurat normals."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(ROLE_TAGS[role], int(run)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class TrajectoryGenerator:
    kind: str = "circle"
    step_count: int = 100
    step_length: float = 0.1
    turn_rate: float = 0.0
    seed: int = 0
    rate: float = DEFAULT_RATE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.step_count) != self.step_count or self.step_count < 2:
            raise ValueError("step_count must be an integer >= 2")
        if self.step_length < 0 or self.turn_rate < 0:
            raise ValueError("step_length and turn_rate must be non-negative")
        if self.rate <= 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class EstimatorNoiseModel:
    sigma_trans: float = 0.0
    sigma_rot: float = 0.0
    reported_scale: float = 1.0
    bias: np.ndarray = field(default_factory=lambda: np.zeros(6))
    seed: int = 0

    def __post_init__(self):
        if self.sigma_trans < 0 or self.sigma_rot < 0:
            raise ValueError("sigmas must be non-negative")
        if not self.reported_scale > 0:
            raise ValueError("reported_scale must be positive")
        bias = np.array(self.bias, dtype=float).reshape(-1)
        if bias.shape != (6,):
            raise ValueError("bias must be a 6-vector")
        object.__setattr__(self, "bias", bias)

    @property
    def sigmas(self) -> np.ndarray:
        return np.repeat([self.sigma_trans, self.sigma_rot], 3)

    def reported_covariance(self) -> BlockDiagonalCovariance:
        return BlockDiagonalCovariance.from_sigmas(
            self.reported_scale * self.sigma_trans, self.reported_scale * self.sigma_rot)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, 6)) * self.sigmas + self.bias


def _twists(gen: TrajectoryGenerator) -> np.ndarray:
    n = gen.step_count - 1
    xi = np.zeros((n, 6))
    xi[:, 0] = gen.step_length
    if gen.kind == "circle":
        xi[:, 5] = gen.turn_rate
    elif gen.kind == "figure-eight":
        loop = max(1, int(round(2 * np.pi / gen.turn_rate))) if gen.turn_rate > 0 else n
        sign = np.where((np.arange(n) // loop) % 2 == 0, 1.0, -1.0)
        xi[:, 5] = sign * gen.turn_rate
    elif gen.kind == "random-walk":
        rng = sub_rng(gen.seed, "truth")
        axis = rng.standard_normal((n, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        xi[:, 3:] = axis * rng.uniform(0.0, gen.turn_rate, (n, 1))
    return xi


def generate_truth(gen: TrajectoryGenerator) -> Trajectory:
    """Ground-truth poses starting at the identity.

    Each step applies the twist ``(step_length, 0, 0, ...)`` with a yaw (or
    random rotation for ``random-walk``) of at most ``turn_rate``, so the
    chord between consecutive poses never exceeds ``step_length``.
    """
    xi = _twists(gen)
    timestamps = np.arange(gen.step_count) / gen.rate
    if gen.kind in ("straight", "circle"):
        # constant twist: closed form avoids accumulated roundoff
        k = np.arange(gen.step_count)[:, None]
        twist = xi[0] if len(xi) else np.zeros(6)
        poses = lie.exp(k * twist)
    else:
        poses = lie.integrate(GroupPose.identity(), lie.exp(xi))
    return Trajectory(timestamps, poses)


def emit_absolute(truth: Trajectory, model: EstimatorNoiseModel,
                  rng: np.random.Generator | None = None) -> Trajectory:
    """Noisy absolute measurements ``truth (+) (bias + n)`` with the
    (possibly mis-scaled) block covariance attached to every record."""
    rng = np.random.default_rng(model.seed) if rng is None else rng
    noise = model.sample(len(truth), rng)
    poses = lie.oplus(truth.poses, noise)
    cov = np.broadcast_to(model.reported_covariance().matrix(), (len(truth), 6, 6))
    return Trajectory(truth.timestamps, poses, cov)


def emit_relative(truth: Trajectory, model: EstimatorNoiseModel,
                  rng: np.random.Generator | None = None) -> Trajectory:
    """Noisy relative motions between consecutive truth poses.

    Record k carries the motion from frame k to k+1, stamped with the later
    frame's time. The mean is ``Exp(u_k) (+) (bias + n)`` where ``u_k`` is
    the true relative motion.
    """
    if len(truth) < 2:
        raise ValueError("relative motions need at least two truth poses")
    rng = np.random.default_rng(model.seed) if rng is None else rng
    prev, curr = truth.poses[:-1], truth.poses[1:]
    exact = lie.compose(lie.inverse(prev), curr)
    noise = model.sample(len(truth) - 1, rng)
    poses = lie.oplus(exact, noise)
    cov = np.broadcast_to(model.reported_covariance().matrix(), (len(truth) - 1, 6, 6))
    return Trajectory(truth.timestamps[1:], poses, cov)


def dead_reckon(initial: GroupPose, controls, start_time: float | None = None):
    """Integrate relative motions from ``initial`` without correction.

    ``controls`` is a relative-motion :class:`Trajectory`, a sequence of
    control :class:`PoseGaussian`, or a :class:`GroupPose` of stacked
    motions. The first two return a :class:`Trajectory` of ``len + 1``
    poses; stacked motions of shape (T, ...) return the stacked
    :class:`GroupPose` of shape (T + 1, ...), which integrates many
    Monte-Carlo runs at once.
    """
    if isinstance(controls, GroupPose):
        if not controls.shape or controls.shape[0] < 1:
            raise ValueError("need at least one control")
        return lie.integrate(initial, controls)
    if isinstance(controls, Trajectory):
        motions, times = controls.poses, controls.timestamps
    else:
        controls = list(controls)
        if not controls:
            raise ValueError("need at least one control")
        motions = GroupPose.stack(c.mean for c in controls)
        times = None
    if len(motions) < 1:
        raise ValueError("need at least one control")
    if times is None:
        t0 = 0.0 if start_time is None else start_time
        timestamps = t0 + np.arange(len(motions) + 1) / DEFAULT_RATE
    else:
        if start_time is None:
            dt = times[1] - times[0] if len(times) > 1 else 1.0 / DEFAULT_RATE
            start_time = times[0] - dt
        timestamps = np.concatenate([[start_time], times])
    return Trajectory(timestamps, lie.integrate(initial, motions))


def control_gaussians(relative: Trajectory) -> list[PoseGaussian]:
    return relative.gaussians("control")


def measurement_gaussians(absolute: Trajectory) -> list[PoseGaussian]:
    return absolute.gaussians("measurement")
