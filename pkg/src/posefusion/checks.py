"""Self-check suites: each property is tested against an independent oracle
(roundtrips, finite differences, grid quadrature, Monte-Carlo NEES).

Checks look functions up through their modules at call time, so a patched
implementation is what gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ekf, lie, sim, uncertainty
from .lie import GroupPose

SUITES = ("lie", "losses", "filter")


@dataclass
class CheckResult:
    name: str
    count: int = 0
    failures: int = 0
    detail: str = ""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass
class SuiteReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed_names(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def render(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{status}  {r.name:<32} {r.count - r.failures}/{r.count}"
                         f"  {r.detail}".rstrip())
        n_fail = len(self.failed_names())
        lines.append(f"{len(self.results) - n_fail} passed, {n_fail} failed"
                     + (f": {', '.join(self.failed_names())}" if n_fail else ""))
        return "\n".join(lines) + "\n"


def random_tangents(rng, n, max_angle=np.pi - 0.1, trans_scale=2.0):
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    phi = axis * rng.uniform(0.0, max_angle, (n, 1))
    return np.concatenate([rng.normal(0.0, trans_scale, (n, 3)), phi], axis=1)


def random_poses(rng, n, **kw) -> GroupPose:
    return lie.exp(random_tangents(rng, n, **kw))


def _count(name, bad, detail="") -> CheckResult:
    bad = np.asarray(bad, dtype=bool).reshape(-1)
    return CheckResult(name, bad.size, int(bad.sum()), detail)


# ---------------------------------------------------------------------------
# lie

def check_exp_log_roundtrip(rng, n=20000):
    xi = random_tangents(rng, n)
    err = np.linalg.norm(lie.log(lie.exp(xi)) - xi, axis=1)
    bound = 1e-9 * (1.0 + np.linalg.norm(xi, axis=1))
    return _count("exp_log_roundtrip", err > bound, f"max err {err.max():.1e}")


def check_group_axioms(rng, n=2000):
    a, b, c = (random_poses(rng, n) for _ in range(3))
    left = lie.compose(lie.compose(a, b), c)
    right = lie.compose(a, lie.compose(b, c))
    ident = lie.compose(a, lie.inverse(a))
    e1 = np.abs(left.canonical().rotation - right.canonical().rotation).max(axis=1)
    e2 = np.abs(left.translation - right.translation).max(axis=1)
    e3 = np.abs(ident.canonical().rotation - [1, 0, 0, 0]).max(axis=1)
    e4 = np.abs(ident.translation).max(axis=1)
    # translations reach ~10 m, so associativity roundoff is scaled accordingly
    scale = 1.0 + np.abs(a.translation).max(axis=1) + np.abs(b.translation).max(axis=1) \
        + np.abs(c.translation).max(axis=1)
    bad = (e1 > 1e-12) | (e2 > 1e-12 * scale) | (e3 > 1e-12) | (e4 > 1e-12 * scale)
    return _count("group_axioms", bad)


def check_oplus_ominus_duality(rng, n=10000):
    a, b = random_poses(rng, n), random_poses(rng, n)
    back = lie.oplus(b, lie.ominus(a, b))
    err = np.maximum(np.abs(back.canonical().rotation - a.canonical().rotation).max(axis=1),
                     np.abs(back.translation - a.translation).max(axis=1))
    return _count("oplus_ominus_duality", err > 1e-9, f"max err {err.max():.1e}")


def check_adjoint_homomorphism(rng, n=2000):
    a, b = random_poses(rng, n), random_poses(rng, n)
    err = np.abs(lie.adjoint(lie.compose(a, b)) - lie.adjoint(a) @ lie.adjoint(b)).max(axis=(1, 2))
    return _count("adjoint_homomorphism", err > 1e-9, f"max err {err.max():.1e}")


def check_adjoint_finite_difference(rng, n=100):
    bad = []
    worst = 0.0
    for g, ref in zip(random_poses(rng, n), random_poses(rng, n)):
        def f(xi, g=g, ref=ref):
            moved = lie.compose(lie.compose(lie.compose(g, lie.exp(xi)), lie.inverse(g)), ref)
            return lie.ominus(moved, ref)
        J = lie.numeric_jacobian(f, np.zeros(6))
        expected = lie.adjoint(lie.inverse(ref)) @ lie.adjoint(g)
        err = np.abs(J - expected).max()
        worst = max(worst, err)
        bad.append(err > 1e-6)
    return _count("adjoint_finite_difference", bad, f"max err {worst:.1e}")


def check_small_angle_continuity(rng, n=200):
    bad = []
    for theta in (1e-7, 0.5e-6, 0.999e-6, 1.001e-6, 2e-6, 1e-5):
        xi = random_tangents(rng, n // 6, max_angle=1.0)
        xi[:, 3:] *= theta / np.linalg.norm(xi[:, 3:], axis=1, keepdims=True)
        qs, ts = lie._exp(xi, force_series=True)
        qc, tc = lie._exp(xi, force_series=False)
        bad.extend(np.maximum(np.abs(qs - qc).max(axis=1), np.abs(ts - tc).max(axis=1)) > 1e-12)
    return _count("small_angle_continuity", bad)


# ---------------------------------------------------------------------------
# losses

def check_nll_gradients(rng, n=1000, h=1e-6):
    pred = rng.normal(0, 1, (n, 6))
    truth = rng.normal(0, 1, (n, 6))
    params = rng.uniform(-2, 1, (n, 2))
    res = uncertainty.nll_loss(pred, truth, params)
    bad = np.zeros(n, dtype=bool)
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        fd = (uncertainty.nll_loss(pred + d, truth, params).loss
              - uncertainty.nll_loss(pred - d, truth, params).loss) / (2 * h)
        bad |= np.abs(fd - res.grad_prediction[:, i]) > 1e-6 * np.maximum(1.0, np.abs(fd))
    for j in range(2):
        d = np.zeros(2)
        d[j] = h
        fd = (uncertainty.nll_loss(pred, truth, params + d).loss
              - uncertainty.nll_loss(pred, truth, params - d).loss) / (2 * h)
        bad |= np.abs(fd - res.grad_params[:, j]) > 1e-6 * np.maximum(1.0, np.abs(fd))
    return _count("nll_gradient_vs_fd", bad)


def check_fit_covariance(rng, n=10000):
    r = np.concatenate([rng.normal(0, 0.5, (n, 3)), rng.normal(0, 0.05, (n, 3))], axis=1)
    fit = uncertainty.fit_covariance(r).to_covariance()
    mle = uncertainty.closed_form_variances(r)
    got = np.array([fit.sigma_trans_sq, fit.sigma_rot_sq])
    rel = np.abs(got - mle) / mle
    sig = np.sqrt(got) / [0.5, 0.05]
    bad = list(rel > 1e-3) + list(np.abs(sig - 1) > 0.05)
    return _count("fit_covariance_mle", bad, f"max rel {rel.max():.1e}")


# ---------------------------------------------------------------------------
# filter

def transition_map(state: GroupPose, control: GroupPose) -> Callable:
    nominal = lie.compose(state, control)
    return lambda d: lie.ominus(lie.compose(lie.oplus(state, d), control), nominal)


def check_transition_jacobian(rng, n=1000):
    states = random_poses(rng, n, trans_scale=5.0)
    controls = random_poses(rng, n, max_angle=1.0, trans_scale=1.0)
    errs = np.empty(n)
    for i in range(n):
        F = ekf.transition_jacobian(controls[i])
        J = lie.numeric_jacobian(transition_map(states[i], controls[i]), np.zeros(6))
        errs[i] = np.abs(F - J).max()
    return _count("transition_jacobian", errs > 1e-6, f"max err {errs.max():.1e}")


def check_measurement_jacobian(rng):
    ok = np.array_equal(ekf.measurement_jacobian(), np.eye(6))
    return _count("measurement_jacobian_identity", [not ok])


def scalar_correction(prior_mean, prior_var, meas_mean, meas_var):
    """Run the 6-D filter's correction on an x-only translation problem."""
    def gaussian(x, var, role):
        pose = GroupPose([1.0, 0.0, 0.0, 0.0], [x, 0.0, 0.0])
        return uncertainty.PoseGaussian(pose, np.eye(6) * var, role)
    state = ekf.EkfState(gaussian(prior_mean, prior_var, "state"))
    post, _ = ekf.correct(state, gaussian(meas_mean, meas_var, "measurement"))
    return post.mean.translation[0], post.covariance[0, 0]


def check_bayes_grid(rng, n=100):
    bad = []
    for _ in range(n):
        pm, mm = rng.uniform(-2, 2, 2)
        pv, mv = rng.uniform(0.2, 2.0, 2)
        gm, gv = ekf.bayes_grid_oracle(pm, pv, mm, mv, grid_halfwidth=15.0, grid_points=20001)
        em, ev = scalar_correction(pm, pv, mm, mv)
        bad.append(abs(gm - em) > 1e-3 or abs(gv - ev) > 1e-3)
    return _count("bayes_grid_oracle", bad)


def nees_runs(runs: int, steps: int, reported_scale: float = 1.0, seed: int = 0,
              step_length: float = 0.1) -> np.ndarray:
    """Mean NEES of each run of the reference circle scenario."""
    from . import evaluation, pipeline

    gen = sim.TrajectoryGenerator("circle", steps, step_length, 2 * np.pi / (steps - 1))
    truth = sim.generate_truth(gen)
    apr = sim.EstimatorNoiseModel(0.25, 0.05, reported_scale)
    rpr = sim.EstimatorNoiseModel(0.01, 0.002, reported_scale)
    out = np.empty(runs)
    for k in range(runs):
        absolute = sim.emit_absolute(truth, apr, sim.sub_rng(seed, "absolute", k))
        relative = sim.emit_relative(truth, rpr, sim.sub_rng(seed, "relative", k))
        fused = pipeline.fuse_streams(absolute, relative, "ekf").trajectory
        out[k] = evaluation.nees(fused, truth)[1]
    return out


def check_nees(rng, runs=60, steps=200):
    seed = int(rng.integers(2**31))
    calibrated = nees_runs(runs, steps, 1.0, seed).mean()
    overconfident = nees_runs(runs // 3, steps, 0.3, seed).mean()
    bad = [not 5.0 <= calibrated <= 7.0, not overconfident > 7.0]
    return _count("nees_consistency", bad,
                  f"calibrated {calibrated:.2f}, overconfident {overconfident:.2f}")


REGISTRY = {
    "lie": [check_exp_log_roundtrip, check_group_axioms, check_oplus_ominus_duality,
            check_adjoint_homomorphism, check_adjoint_finite_difference,
            check_small_angle_continuity],
    "losses": [check_nll_gradients, check_fit_covariance],
    "filter": [check_transition_jacobian, check_measurement_jacobian,
               check_bayes_grid, check_nees],
}


def run_suite(suite: str = "all", seed: int = 0) -> SuiteReport:
    if suite != "all" and suite not in REGISTRY:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    names = SUITES if suite == "all" else (suite,)
    report = SuiteReport()
    for name in names:
        for i, check in enumerate(REGISTRY[name]):
            rng = np.random.default_rng([seed, SUITES.index(name), i])
            t0 = time.perf_counter()
            try:
                result = check(rng)
            except Exception as exc:  # a crashing check is a failed check
                result = CheckResult(check.__name__.removeprefix("check_"), 1, 1,
                                     f"raised {type(exc).__name__}: {exc}")
            result.seconds = time.perf_counter() - t0
            report.results.append(result)
    return report
