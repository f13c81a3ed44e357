"""Trajectory container and pose file formats.

TUM:      ``timestamp tx ty tz qx qy qz qw``
TUM-cov:  TUM columns followed by ``sigma_trans_sq sigma_rot_sq``
matrix4:  one 4x4 homogeneous matrix per frame (7-Scenes ``*.pose.txt``)

Quaternions are (qx, qy, qz, qw) on disk and (w, x, y, z) in memory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError
from .lie import GroupPose
from .uncertainty import EPS, BlockDiagonalCovariance, PoseGaussian

log = logging.getLogger(__name__)

DEFAULT_RATE = 30.0
TUM_FIELDS = 8
TUM_COV_FIELDS = 10
ORTHO_REPAIR_LIMIT = 1e-3


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses with optional per-record 6x6 covariances."""

    timestamps: np.ndarray
    poses: GroupPose
    covariances: np.ndarray | None = None

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        if self.poses.shape != ts.shape:
            raise ValueError(f"{len(ts)} timestamps for poses of shape {self.poses.shape}")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        if self.covariances is not None:
            cov = np.array(self.covariances, dtype=float)
            if cov.shape != ts.shape + (6, 6):
                raise ValueError(f"covariances must be (N, 6, 6), got {cov.shape}")
            object.__setattr__(self, "covariances", cov)

    @classmethod
    def from_gaussians(cls, timestamps, gaussians: Sequence[PoseGaussian]) -> "Trajectory":
        gaussians = list(gaussians)
        return cls(timestamps, GroupPose.stack(g.mean for g in gaussians),
                   np.stack([g.covariance for g in gaussians]))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, idx) -> "Trajectory":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        cov = None if self.covariances is None else self.covariances[idx]
        return Trajectory(self.timestamps[idx], self.poses[idx], cov)

    def gaussian(self, i: int, role: str) -> PoseGaussian:
        if self.covariances is None:
            raise ValueError("trajectory carries no covariances")
        return PoseGaussian(self.poses[i], self.covariances[i], role)

    def gaussians(self, role: str) -> list[PoseGaussian]:
        return [self.gaussian(i, role) for i in range(len(self))]


def block_variances(cov: np.ndarray) -> np.ndarray:
    """Reduce (..., 6, 6) covariances to per-block mean diagonal variances.

    Exact for block-diagonal covariances; dense filter covariances lose
    their off-diagonal terms.
    """
    d = np.diagonal(cov, axis1=-2, axis2=-1)
    return np.stack([d[..., :3].mean(axis=-1), d[..., 3:].mean(axis=-1)], axis=-1)


# ---------------------------------------------------------------------------
# parsing

def _lines(text) -> Iterable[str]:
    if isinstance(text, str):
        return text.splitlines()
    return text


def _parse_rows(text, n_fields: int):
    rows = []
    prev_t = -math.inf
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != n_fields:
            raise ParseError(f"expected {n_fields} fields, got {len(parts)}", lineno)
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", lineno)
        if values[0] <= prev_t:
            raise ParseError(f"timestamp {parts[0]} is not increasing", lineno)
        quat = values[4:8]
        if math.fsum(q * q for q in quat) == 0.0:
            raise ParseError("zero quaternion", lineno)
        prev_t = values[0]
        rows.append((lineno, values))
    return rows


def _rows_to_trajectory(rows, covariances=None) -> Trajectory:
    if not rows:
        return Trajectory(np.zeros(0), GroupPose.identity((0,)), covariances)
    arr = np.array([v for _, v in rows])
    q = arr[:, [7, 4, 5, 6]]
    return Trajectory(arr[:, 0], GroupPose(q, arr[:, 1:4]), covariances)


def parse_tum(text) -> Trajectory:
    """Parse TUM lines; ``#`` comments and blank lines are skipped."""
    return _rows_to_trajectory(_parse_rows(text, TUM_FIELDS))


def parse_tum_cov(text) -> Trajectory:
    """Parse TUM lines carrying two trailing block variances."""
    rows = _parse_rows(text, TUM_COV_FIELDS)
    covs = []
    for lineno, values in rows:
        try:
            covs.append(BlockDiagonalCovariance(values[8], values[9]).matrix())
        except ValueError as exc:
            raise ParseError(f"invalid variance: {exc}", lineno) from None
    return _rows_to_trajectory(rows, np.array(covs).reshape(-1, 6, 6))


def _nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def parse_matrix4_frame(text, frame: int | str = 0) -> GroupPose:
    values = []
    for raw in _lines(text):
        line = raw.strip()
        if line and not line.startswith("#"):
            values.extend(line.replace(",", " ").split())
    try:
        M = np.array([float(v) for v in values])
    except ValueError as exc:
        raise ParseError(f"frame {frame}: {exc}") from None
    if M.size != 16:
        raise ParseError(f"frame {frame}: expected 16 numbers, got {M.size}")
    if not np.all(np.isfinite(M)):
        raise ParseError(f"frame {frame}: non-finite value")
    M = M.reshape(4, 4)
    if np.max(np.abs(M[3] - [0.0, 0.0, 0.0, 1.0])) > 1e-6:
        raise ParseError(f"frame {frame}: bottom row must be (0, 0, 0, 1)")
    R = M[:3, :3]
    deviation = float(np.max(np.abs(R.T @ R - np.eye(3))))
    if deviation >= ORTHO_REPAIR_LIMIT or np.linalg.det(R) <= 0:
        raise ParseError(f"frame {frame}: 3x3 block is not a rotation "
                         f"(orthonormality deviation {deviation:.3e})")
    if deviation > 0.0:
        R = _nearest_rotation(R)
        if deviation > 1e-9:
            log.info("frame %s: projected rotation onto SO(3) (deviation %.3e)",
                     frame, deviation)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = M[:3, 3]
    return GroupPose.from_matrix(T)


def parse_matrix4(frames: Iterable, rate: float = DEFAULT_RATE,
                  timestamps=None) -> Trajectory:
    """One pose per frame text; timestamps default to ``index / rate``."""
    poses = [parse_matrix4_frame(text, i) for i, text in enumerate(frames)]
    if timestamps is None:
        timestamps = np.arange(len(poses)) / rate
    if not poses:
        return Trajectory(np.zeros(0), GroupPose.identity((0,)))
    return Trajectory(timestamps, GroupPose.stack(poses))


# ---------------------------------------------------------------------------
# writing

def format_value(v: float) -> str:
    """Nine significant digits when that is lossless, else shortest repr."""
    v = float(v)
    if v == 0.0:
        return "0"
    s = f"{v:.9g}"
    return s if float(s) == v else repr(v)


def format_timestamp(t: float) -> str:
    s = f"{float(t):.9f}"
    return s if float(s) == t else repr(float(t))


def _pose_fields(traj: Trajectory) -> list[list[str]]:
    poses = traj.poses.canonical()
    q = poses.rotation[:, [1, 2, 3, 0]]
    rows = []
    for i, t in enumerate(traj.timestamps):
        rows.append([format_timestamp(t)]
                    + [format_value(v) for v in poses.translation[i]]
                    + [format_value(v) for v in q[i]])
    return rows


def write_tum(traj: Trajectory) -> str:
    return "".join(" ".join(r) + "\n" for r in _pose_fields(traj))


def write_tum_cov(traj: Trajectory) -> str:
    """TUM-cov text. Dense covariances are reduced with :func:`block_variances`."""
    if traj.covariances is None:
        raise ValueError("trajectory carries no covariances")
    var = np.maximum(block_variances(traj.covariances), EPS)
    out = []
    for row, v in zip(_pose_fields(traj), var):
        out.append(" ".join(row + [format_value(v[0]), format_value(v[1])]) + "\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# files

def detect_fields(text: str) -> int | None:
    for raw in _lines(text):
        line = raw.strip()
        if line and not line.startswith("#"):
            return len(line.split())
    return None


def read_trajectory(path) -> Trajectory:
    """Read TUM or TUM-cov, chosen by the field count of the first record."""
    text = Path(path).read_text()
    if detect_fields(text) == TUM_COV_FIELDS:
        return parse_tum_cov(text)
    return parse_tum(text)


def write_trajectory(path, traj: Trajectory) -> None:
    text = write_tum(traj) if traj.covariances is None else write_tum_cov(traj)
    Path(path).write_text(text)


def read_matrix4_dir(directory, pattern: str = "*.pose.txt",
                     rate: float = DEFAULT_RATE) -> Trajectory:
    files = sorted(Path(directory).glob(pattern))
    return parse_matrix4((f.read_text() for f in files), rate=rate)
