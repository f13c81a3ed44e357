"""Stream-level fusion: run the filter over absolute and relative pose files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ekf
from .errors import AlignmentError, ConfigError
from .lie import GroupPose
from .traj_io import Trajectory, format_timestamp, format_value

MODES = ("ekf", "apr-only", "dead-reckon")
TIME_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FusionResult:
    trajectory: Trajectory
    reports: list
    report_times: np.ndarray


def _match_absolute(absolute: Trajectory, times: np.ndarray) -> np.ndarray:
    """Index of the absolute record sharing each time, or -1."""
    if len(absolute) == 0:
        return np.full(len(times), -1)
    idx = np.clip(np.searchsorted(absolute.timestamps, times), 0, len(absolute) - 1)
    out = np.full(len(times), -1)
    for k, t in enumerate(times):
        for j in (idx[k] - 1, idx[k]):
            if 0 <= j < len(absolute) and abs(absolute.timestamps[j] - t) <= TIME_TOLERANCE:
                out[k] = j
                break
    return out


def fuse_streams(absolute: Trajectory, relative: Trajectory, mode: str = "ekf") -> FusionResult:
    """Fuse an absolute measurement stream with a relative control stream.

    The filter starts from the first absolute record. Every relative record
    stamped after it is one prediction; an absolute record sharing that
    timestamp (within 1e-6 s) triggers a correction. ``dead-reckon`` runs
    the same predictions without corrections, ``apr-only`` returns the
    absolute stream unchanged.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if len(absolute) == 0:
        raise AlignmentError(f"{mode} mode needs an initial absolute measurement")
    if mode == "apr-only":
        return FusionResult(absolute, [], np.zeros(0))
    if relative.covariances is None or absolute.covariances is None:
        raise ValueError("both streams must carry covariances")
    if len(relative) == 0:
        raise AlignmentError("relative stream is empty")

    t0 = absolute.timestamps[0]
    use = relative.timestamps > t0 + TIME_TOLERANCE
    rel = relative[np.flatnonzero(use)] if not use.all() else relative
    if len(rel) == 0:
        raise AlignmentError("no relative records after the first absolute measurement")
    matches = _match_absolute(absolute, rel.timestamps)

    state = ekf.initialize(ekf.EkfState(), absolute.gaussian(0, "measurement"))
    n = len(rel) + 1
    q = np.empty((n, 4))
    t = np.empty((n, 3))
    covs = np.empty((n, 6, 6))
    q[0], t[0], covs[0] = state.mean.rotation, state.mean.translation, state.covariance
    reports = []
    for k in range(len(rel)):
        meas = None
        if mode == "ekf" and matches[k] >= 0:
            meas = absolute.gaussian(int(matches[k]), "measurement")
        state, report = ekf.step(state, rel.gaussian(k, "control"), meas)
        reports.append(report)
        q[k + 1], t[k + 1], covs[k + 1] = state.mean.rotation, state.mean.translation, state.covariance
    times = np.concatenate([[t0], rel.timestamps])
    return FusionResult(Trajectory(times, GroupPose(q, t), covs), reports, rel.timestamps.copy())


STEP_REPORT_HEADER = ("# t measured r_rho_x r_rho_y r_rho_z r_phi_x r_phi_y r_phi_z "
                      "gain_trace prior_trace posterior_trace")


def write_step_reports(result: FusionResult) -> str:
    """One line per filter step; residual and gain are 0 on predict-only steps."""
    lines = [STEP_REPORT_HEADER]
    for t, rep in zip(result.report_times, result.reports):
        measured = not rep.measurement_free
        r = rep.residual if measured else np.zeros(6)
        gain = float(np.trace(rep.gain)) if measured else 0.0
        fields = [format_timestamp(t), "1" if measured else "0"]
        fields += [format_value(v) for v in r]
        fields += [format_value(gain), format_value(np.trace(rep.prior.covariance)),
                   format_value(np.trace(rep.posterior.covariance))]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"
