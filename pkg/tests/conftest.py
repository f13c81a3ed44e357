import numpy as np
import pytest

from posefusion import lie


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def twist_matrix(xi):
    """4x4 se(3) matrix of a (rho, phi) tangent."""
    X = np.zeros((4, 4))
    X[:3, :3] = lie.skew(xi[3:])
    X[:3, 3] = xi[:3]
    return X


def random_tangent(rng, max_angle=np.pi - 0.1, trans_scale=2.0):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return np.concatenate([rng.normal(0, trans_scale, 3), axis * rng.uniform(0, max_angle)])


def random_pose(rng, **kw):
    return lie.exp(random_tangent(rng, **kw))


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {k:>2}: {title} ({detail})")
