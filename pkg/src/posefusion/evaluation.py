"""Pose error metrics, NEES consistency and method comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg as sla

from . import lie
from .errors import AlignmentError, NumericalError
from .traj_io import Trajectory, format_timestamp
from .uncertainty import PoseGaussian

TIME_TOLERANCE = 1e-6
ROTATION_METRIC = "geodesic angle of the relative rotation"


def median(values) -> float:
    """Median with the midpoint-of-two rule for even counts."""
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    if n == 0:
        return float("nan")
    mid = n // 2
    if n % 2:
        return float(v[mid])
    return float(0.5 * (v[mid - 1] + v[mid]))


@dataclass(frozen=True, eq=False)
class ErrorReport:
    timestamps: np.ndarray
    trans_errors: np.ndarray
    rot_errors_deg: np.ndarray
    positions: np.ndarray | None = None
    nees_mean: float | None = None
    metadata: dict = field(default_factory=lambda: {"rotation_metric": ROTATION_METRIC})

    @property
    def median_trans(self) -> float:
        return median(self.trans_errors)

    @property
    def mean_trans(self) -> float:
        return float(np.mean(self.trans_errors))

    @property
    def median_rot(self) -> float:
        return median(self.rot_errors_deg)

    @property
    def mean_rot(self) -> float:
        return float(np.mean(self.rot_errors_deg))

    def summary(self) -> str:
        """Median errors in the ``0.18m, 6.75°`` style."""
        return format_pair(self.median_trans, self.median_rot)

    def mean_summary(self) -> str:
        return format_pair(self.mean_trans, self.mean_rot)

    def stats(self) -> dict:
        out = {"median_trans": self.median_trans, "mean_trans": self.mean_trans,
               "median_rot": self.median_rot, "mean_rot": self.mean_rot}
        if self.nees_mean is not None:
            out["nees_mean"] = self.nees_mean
        return out


def format_pair(trans_m: float, rot_deg: float) -> str:
    return f"{trans_m:.2f}m, {rot_deg:.2f}°"


def check_alignment(estimate: Trajectory, truth: Trajectory) -> None:
    if len(estimate) != len(truth):
        raise AlignmentError(f"length mismatch: {len(estimate)} estimates, {len(truth)} truth poses")
    off = np.abs(estimate.timestamps - truth.timestamps) > TIME_TOLERANCE
    if np.any(off):
        i = int(np.argmax(off))
        raise AlignmentError(
            f"timestamp mismatch at record {i}: estimate {estimate.timestamps[i]!r}, "
            f"truth {truth.timestamps[i]!r}")


def rotation_errors_deg(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations, ``2 acos |<qa, qb>|`` in degrees.

    Evaluated as ``2 atan2(|v|, |w|)`` of the relative quaternion, which is
    the same angle without the loss of precision of acos near 1.
    """
    rel = lie.quat_multiply(lie.quat_conjugate(qa), qb)
    angle = 2.0 * np.arctan2(np.linalg.norm(rel[..., 1:], axis=-1), np.abs(rel[..., 0]))
    return np.degrees(angle)


def pose_errors(estimate: Trajectory, truth: Trajectory) -> ErrorReport:
    check_alignment(estimate, truth)
    trans = np.linalg.norm(estimate.poses.translation - truth.poses.translation, axis=-1)
    rot = rotation_errors_deg(estimate.poses.rotation, truth.poses.rotation)
    return ErrorReport(truth.timestamps.copy(), trans, rot,
                       positions=estimate.poses.translation.copy())


def nees(estimates: Sequence[PoseGaussian] | Trajectory, truth: Trajectory):
    """Per-frame normalized estimation error squared and its mean.

    The error is ``truth (-) estimate`` in the estimate's tangent frame,
    the frame its covariance lives in.
    """
    if isinstance(estimates, Trajectory):
        check_alignment(estimates, truth)
        means, covs = estimates.poses, estimates.covariances
        if covs is None:
            raise ValueError("estimates carry no covariances")
    else:
        estimates = list(estimates)
        if len(estimates) != len(truth):
            raise AlignmentError("length mismatch between estimates and truth")
        means = lie.GroupPose.stack(e.mean for e in estimates)
        covs = np.stack([e.covariance for e in estimates])
    err = lie.ominus(truth.poses, means)
    values = np.empty(len(truth))
    for i in range(len(truth)):
        try:
            factor = sla.cho_factor(covs[i], lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError(f"covariance at frame {i} is singular") from None
        values[i] = err[i] @ sla.cho_solve(factor, err[i])
    return values, float(np.mean(values))


# ---------------------------------------------------------------------------
# comparison tables

COLUMNS = (("median_trans", "Median trans [m]"), ("mean_trans", "Mean trans [m]"),
           ("median_rot", "Median rot [deg]"), ("mean_rot", "Mean rot [deg]"))


@dataclass(frozen=True)
class ComparisonTable:
    text: str
    rows: list

    def to_json(self) -> str:
        return json.dumps({"columns": [c for c, _ in COLUMNS], "rows": self.rows},
                          indent=2, sort_keys=True) + "\n"


def compare_methods(reports: Mapping[str, ErrorReport]) -> ComparisonTable:
    """Aligned table, one row per method; ``*`` marks the best (smallest)
    value of each column, ties all marked."""
    if not reports:
        raise ValueError("need at least one report")
    names = list(reports)
    values = {c: [round(getattr(reports[n], c), 2) for n in names] for c, _ in COLUMNS}
    best = {c: min(v) for c, v in values.items()}
    rows = []
    for i, name in enumerate(names):
        row = {"method": name}
        for c, _ in COLUMNS:
            row[c] = values[c][i]
            row[c + "_best"] = values[c][i] == best[c]
        rows.append(row)

    header = ["Method"] + [label for _, label in COLUMNS]
    cells = [[r["method"]] + [f"{r[c]:.2f}" + ("*" if r[c + "_best"] else " ")
                              for c, _ in COLUMNS] for r in rows]
    widths = [max(len(h), *(len(c[j]) for c in cells)) for j, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[0]) if j == 0 else h.rjust(widths[j])
                       for j, h in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(widths[0]) if j == 0 else v.rjust(widths[j])
                               for j, v in enumerate(c)).rstrip())
    lines.append("* best in column")
    return ComparisonTable("\n".join(lines) + "\n", rows)


def report_records(report: ErrorReport) -> str:
    """Machine-readable report: per-frame records, then a summary block.

    Frame columns are ``t x y z err_trans_m err_rot_deg`` (the plot dump).
    """
    lines = ["# t x y z err_trans_m err_rot_deg"]
    pos = report.positions if report.positions is not None else np.full(
        (len(report.timestamps), 3), np.nan)
    for t, p, et, er in zip(report.timestamps, pos, report.trans_errors, report.rot_errors_deg):
        lines.append(" ".join([format_timestamp(t)] + [f"{v:.9g}" for v in (*p, et, er)]))
    lines.append("# summary")
    for key, value in report.stats().items():
        lines.append(f"# {key} {value:.9g}")
    lines.append(f"# frames {len(report.timestamps)}")
    lines.append(f"# rotation_metric {report.metadata.get('rotation_metric', ROTATION_METRIC)}")
    return "\n".join(lines) + "\n"
