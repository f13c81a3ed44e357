"""Command-line interface: ``simulate``, ``fuse``, ``eval`` and ``check``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numerical failure, 5 check failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checks, evaluation, pipeline, sim, traj_io
from .errors import AlignmentError, ConfigError, NumericalError, ParseError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_CHECK = 5

log = logging.getLogger("posefusion")


@dataclass
class ScenarioConfig:
    """Flat scenario description; every field is a ``key = value`` line in a
    config file. ``turn_rate`` defaults to one closed loop over the run."""

    kind: str = "circle"
    steps: int = 1000
    step_length: float = 0.1
    turn_rate: float | None = None
    rate: float = traj_io.DEFAULT_RATE
    seed: int = 0
    runs: int = 1
    out: str = "scenario"
    abs_sigma_trans: float = 0.25
    abs_sigma_rot: float = 0.05
    abs_reported_scale: float = 1.0
    abs_bias: tuple = (0.0,) * 6
    rel_sigma_trans: float = 0.01
    rel_sigma_rot: float = 0.002
    rel_reported_scale: float = 1.0
    rel_bias: tuple = (0.0,) * 6

    def resolved_turn_rate(self) -> float:
        if self.turn_rate is not None:
            return self.turn_rate
        return 2 * math.pi / (self.steps - 1) if self.kind in ("circle", "figure-eight") else 0.0

    def generator(self) -> sim.TrajectoryGenerator:
        try:
            return sim.TrajectoryGenerator(self.kind, self.steps, self.step_length,
                                           self.resolved_turn_rate(), self.seed, self.rate)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def noise_model(self, role: str) -> sim.EstimatorNoiseModel:
        p = "abs" if role == "absolute" else "rel"
        try:
            return sim.EstimatorNoiseModel(
                getattr(self, f"{p}_sigma_trans"), getattr(self, f"{p}_sigma_rot"),
                getattr(self, f"{p}_reported_scale"), np.array(getattr(self, f"{p}_bias")),
                self.seed)
        except ValueError as exc:
            raise ConfigError(f"{p}_*: {exc}") from None

    def validate(self) -> "ScenarioConfig":
        if self.runs < 1:
            raise ConfigError("runs: must be >= 1")
        if self.steps < 2:
            raise ConfigError("steps: must be >= 2")
        self.generator()
        self.noise_model("absolute")
        self.noise_model("relative")
        return self

    def set(self, key: str, raw: str) -> None:
        types = {f.name: f for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(ScenarioConfig, key, None)
        try:
            if key in ("abs_bias", "rel_bias"):
                value = tuple(float(v) for v in raw.replace(",", " ").split())
                if len(value) != 6:
                    raise ValueError("expected 6 comma-separated numbers")
            elif key == "turn_rate":
                value = None if raw.strip().lower() in ("", "auto") else float(raw)
            elif isinstance(current, bool) or key in ("kind", "out"):
                value = raw.strip()
            elif isinstance(current, int):
                value = int(raw)
            else:
                value = float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{key}: must be finite")
        setattr(self, key, value)

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"config line {lineno}: {exc}") from None
        return cfg

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(repr(float(v)) for v in value)
            elif value is None:
                value = "auto"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands

def simulate(cfg: ScenarioConfig) -> list[dict]:
    """Write truth, absolute and relative streams for every run."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = sim.generate_truth(cfg.generator())
    apr, rpr = cfg.noise_model("absolute"), cfg.noise_model("relative")
    written = []
    for run in range(cfg.runs):
        suffix = "" if cfg.runs == 1 else f"_{run:03d}"
        absolute = sim.emit_absolute(truth, apr, sim.sub_rng(cfg.seed, "absolute", run))
        relative = sim.emit_relative(truth, rpr, sim.sub_rng(cfg.seed, "relative", run))
        paths = {name: out / f"{name}{suffix}.tum" for name in ("truth", "absolute", "relative")}
        paths["truth"].write_text(traj_io.write_tum(truth))
        paths["absolute"].write_text(traj_io.write_tum_cov(absolute))
        paths["relative"].write_text(traj_io.write_tum_cov(relative))
        written.append(paths)
    (out / "scenario.cfg").write_text(cfg.to_text())
    return written


def fuse(abs_path, rel_path, out_path, mode: str = "ekf", reports_path=None) -> pipeline.FusionResult:
    absolute = traj_io.read_trajectory(abs_path)
    if mode == "apr-only":
        result = pipeline.fuse_streams(absolute, absolute, mode)
    else:
        relative = traj_io.read_trajectory(rel_path)
        result = pipeline.fuse_streams(absolute, relative, mode)
    Path(out_path).write_text(traj_io.write_tum_cov(result.trajectory)
                              if result.trajectory.covariances is not None
                              else traj_io.write_tum(result.trajectory))
    reports_path = Path(reports_path) if reports_path else Path(str(out_path) + ".steps")
    reports_path.write_text(pipeline.write_step_reports(result))
    return result


def evaluate(est_path, truth_path, out_prefix=None, name=None) -> tuple[str, evaluation.ErrorReport]:
    estimate = traj_io.read_trajectory(est_path)
    truth = traj_io.read_trajectory(truth_path)
    report = evaluation.pose_errors(estimate, truth)
    if estimate.covariances is not None:
        _, nees_mean = evaluation.nees(estimate, truth)
        report = evaluation.ErrorReport(report.timestamps, report.trans_errors,
                                        report.rot_errors_deg, report.positions, nees_mean)
    name = name or Path(est_path).stem
    table = evaluation.compare_methods({name: report})
    text = f"{name}: {report.summary()} (median), {report.mean_summary()} (mean)\n" + table.text
    if out_prefix:
        prefix = str(out_prefix)
        Path(prefix + ".report.txt").write_text(evaluation.report_records(report))
        Path(prefix + ".table.txt").write_text(table.text)
        Path(prefix + ".table.json").write_text(table.to_json())
    return text, report


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posefusion", description="Fuse absolute and relative pose estimates on SE(3).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", type=Path, help="key = value scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")

    p = sub.add_parser("fuse", help="fuse absolute and relative streams")
    p.add_argument("absolute", type=Path, help="absolute stream (TUM-cov)")
    p.add_argument("relative", type=Path, nargs="?", help="relative stream (TUM-cov)")
    p.add_argument("--mode", choices=pipeline.MODES, default="ekf")
    p.add_argument("--out", type=Path, required=True, help="fused trajectory (TUM-cov)")
    p.add_argument("--reports", type=Path, help="step report file (default: OUT.steps)")

    p = sub.add_parser("eval", help="evaluate an estimate against ground truth")
    p.add_argument("estimate", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--out", help="prefix for report, table and plot-dump files")
    p.add_argument("--name", help="method name used in the table")

    p = sub.add_parser("check", help="run the built-in oracle suites")
    p.add_argument("suite", nargs="?", default="all", choices=checks.SUITES + ("all",))
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run(args) -> int:
    if args.command == "simulate":
        cfg = ScenarioConfig.from_text(args.config.read_text()) if args.config else ScenarioConfig()
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            cfg.set(key.strip(), value)
        for key in ("seed", "runs", "out"):
            value = getattr(args, key)
            if value is not None:
                setattr(cfg, key, value)
        written = simulate(cfg)
        print(f"wrote {len(written)} run(s) to {cfg.out}")
    elif args.command == "fuse":
        if args.mode != "apr-only" and args.relative is None:
            raise ConfigError(f"{args.mode} mode needs a relative stream")
        result = fuse(args.absolute, args.relative, args.out, args.mode, args.reports)
        print(f"fused {len(result.trajectory)} poses ({args.mode}) -> {args.out}")
    elif args.command == "eval":
        text, _ = evaluate(args.estimate, args.truth, args.out, args.name)
        sys.stdout.write(text)
    elif args.command == "check":
        report = checks.run_suite(args.suite, args.seed)
        sys.stdout.write(report.render())
        if not report.passed:
            return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, AlignmentError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # structurally valid files carrying unusable content
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
