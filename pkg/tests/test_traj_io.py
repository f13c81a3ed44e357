from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tangent
from posefusion import lie, traj_io
from posefusion.errors import ParseError
from posefusion.lie import GroupPose
from posefusion.traj_io import Trajectory

DATA = Path(__file__).parent / "data"


def random_trajectory(rng, n, with_cov=False):
    t = np.cumsum(rng.uniform(1e-3, 1.0, n)) + rng.uniform(0, 1e6)
    poses = lie.exp(np.stack([random_tangent(rng, trans_scale=50.0) for _ in range(n)]))
    cov = None
    if with_cov:
        v = 10.0 ** rng.uniform(-8, 2, (n, 2))
        cov = np.stack([np.diag(np.repeat(row, 3)) for row in v])
    return Trajectory(t, poses, cov)


def assert_same(a: Trajectory, b: Trajectory, atol=1e-12):
    assert len(a) == len(b)
    np.testing.assert_allclose(a.timestamps, b.timestamps, rtol=0, atol=atol * 1e6)
    np.testing.assert_allclose(a.poses.translation, b.poses.translation, rtol=0, atol=atol)
    np.testing.assert_allclose(a.poses.canonical().rotation, b.poses.canonical().rotation,
                               rtol=0, atol=atol)
    if a.covariances is not None:
        np.testing.assert_allclose(a.covariances, b.covariances, rtol=atol, atol=0)


# ---------------------------------------------------------------- TUM

def test_parse_single_line():
    traj = traj_io.parse_tum("0.0 1.0 2.0 3.0 0 0 0 1")
    assert len(traj) == 1 and traj.covariances is None
    np.testing.assert_array_equal(traj.poses.translation[0], [1, 2, 3])
    np.testing.assert_array_equal(traj.poses.rotation[0], [1, 0, 0, 0])


def test_parse_sample_file():
    traj = traj_io.read_trajectory(DATA / "sample.tum")
    assert len(traj) == 3
    np.testing.assert_array_equal(traj.timestamps, [0.0, 0.5, 1.0])
    # 90 degrees about z
    np.testing.assert_allclose(traj.poses[1].rotation_matrix(),
                               [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    # qw = -1 is the identity rotation
    assert traj.poses[2].allclose(GroupPose([1, 0, 0, 0], [-1, 0.5, 2]), atol=0)


def test_comments_and_blank_lines_are_skipped():
    traj = traj_io.parse_tum("# comment\n\n   \n0.0 1 2 3 0 0 0 1\n# another\n")
    assert len(traj) == 1


@pytest.mark.parametrize("text, line, fragment", [
    ("0.0 1 2 3 0 0 0", 1, "expected 8 fields"),
    ("# header\n0.0 1 2 3 0 0 0 1\n0.1 1 2 3 0 0 0 1 9", 3, "expected 8 fields"),
    ("0.0 1 2 nan 0 0 0 1", 1, "non-finite"),
    ("0.0 1 2 inf 0 0 0 1", 1, "non-finite"),
    ("0.0 1 2 3 0 0 0 1\n0.0 1 2 3 0 0 0 1", 2, "not increasing"),
    ("0.5 1 2 3 0 0 0 1\n0.1 1 2 3 0 0 0 1", 2, "not increasing"),
    ("0.0 1 2 3 0 0 0 0", 1, "zero quaternion"),
    ("0.0 1 2 x 0 0 0 1", 1, "could not convert"),
])
def test_parse_errors_name_the_line(text, line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        traj_io.parse_tum(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_quaternions_are_normalized_on_load():
    traj = traj_io.parse_tum("0 0 0 0 0 0 3 4\n1 0 0 0 1 1 1 1")
    np.testing.assert_allclose(np.linalg.norm(traj.poses.rotation, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(traj.poses.rotation[0], [0.8, 0, 0, 0.6], atol=1e-15)


def test_identity_line_is_canonical():
    traj = Trajectory([0.0], GroupPose.identity((1,)))
    assert traj_io.write_tum(traj) == "0.000000000 0 0 0 0 0 0 1\n"


def test_writer_uses_positive_w_and_nine_digits():
    traj = traj_io.parse_tum("1.5 0.1 -2 3.25 0 0 0.6 -0.8")
    line = traj_io.write_tum(traj)
    assert line == "1.500000000 0.1 -2 3.25 0 0 -0.6 0.8\n"


def test_writer_falls_back_to_repr_when_nine_digits_lose_information():
    v = 0.1 + 0.2
    assert traj_io.format_value(v) == repr(v)
    assert float(traj_io.format_value(v)) == v
    t = 1234567.123456789012
    assert float(traj_io.format_timestamp(t)) == t


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e9, 1e9, allow_nan=False))
def test_format_value_roundtrips_exactly(v):
    assert float(traj_io.format_value(v)) == v


def test_empty_input_gives_empty_trajectory():
    assert len(traj_io.parse_tum("# nothing\n")) == 0


# ---------------------------------------------------------------- TUM-cov

def test_parse_cov_suffix():
    traj = traj_io.parse_tum_cov("0.0 1 2 3 0 0 0 1 0.01 0.001")
    np.testing.assert_array_equal(traj.covariances[0], np.diag([0.01] * 3 + [0.001] * 3))


@pytest.mark.parametrize("suffix", ["0 0.001", "0.01 0", "-1 0.01", "0.01 1e-13"])
def test_cov_variance_below_floor_is_rejected(suffix):
    with pytest.raises(ParseError, match="line 1: invalid variance"):
        traj_io.parse_tum_cov(f"0.0 1 2 3 0 0 0 1 {suffix}")


def test_cov_writer_emits_ten_fields(rng):
    text = traj_io.write_tum_cov(random_trajectory(rng, 20, with_cov=True))
    assert all(len(line.split()) == 10 for line in text.splitlines())
    with pytest.raises(ValueError):
        traj_io.write_tum_cov(random_trajectory(rng, 2))


def test_dense_covariance_is_reduced_to_block_means():
    cov = np.diag([1.0, 2.0, 3.0, 0.1, 0.2, 0.3])
    cov[0, 4] = cov[4, 0] = 0.05
    traj = Trajectory([0.0], GroupPose.identity((1,)), cov[None])
    back = traj_io.parse_tum_cov(traj_io.write_tum_cov(traj))
    np.testing.assert_allclose(back.covariances[0], np.diag([2.0] * 3 + [0.2] * 3))


def test_read_detects_format(tmp_path, rng):
    plain, cov = random_trajectory(rng, 5), random_trajectory(rng, 5, with_cov=True)
    traj_io.write_trajectory(tmp_path / "a.tum", plain)
    traj_io.write_trajectory(tmp_path / "b.tum", cov)
    assert traj_io.read_trajectory(tmp_path / "a.tum").covariances is None
    assert traj_io.read_trajectory(tmp_path / "b.tum").covariances.shape == (5, 6, 6)


# ---------------------------------------------------------------- roundtrips

def test_tum_roundtrip_random(rng):
    for _ in range(50):
        traj = random_trajectory(rng, int(rng.integers(1, 40)))
        assert_same(traj, traj_io.parse_tum(traj_io.write_tum(traj)))


def test_tum_cov_roundtrip_random(rng):
    for _ in range(50):
        traj = random_trajectory(rng, int(rng.integers(1, 40)), with_cov=True)
        assert_same(traj, traj_io.parse_tum_cov(traj_io.write_tum_cov(traj)))


def test_written_text_is_a_fixed_point(rng):
    traj = random_trajectory(rng, 30, with_cov=True)
    text = traj_io.write_tum_cov(traj)
    assert traj_io.write_tum_cov(traj_io.parse_tum_cov(text)) == text


# ---------------------------------------------------------------- 4x4 frames

IDENTITY4 = "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"


def test_matrix4_identity():
    assert traj_io.parse_matrix4_frame(IDENTITY4).allclose(GroupPose.identity(), atol=0)


def test_matrix4_translation():
    pose = traj_io.parse_matrix4_frame("1 0 0 4\n0 1 0 -5\n0 0 1 6\n0 0 0 1")
    np.testing.assert_array_equal(pose.translation, [4, -5, 6])
    np.testing.assert_array_equal(pose.rotation, [1, 0, 0, 0])


def test_matrix4_roundtrip(rng):
    for _ in range(50):
        g = lie.exp(random_tangent(rng))
        text = "\n".join(" ".join(repr(float(v)) for v in row) for row in g.as_matrix())
        assert traj_io.parse_matrix4_frame(text).allclose(g, atol=1e-12)


@pytest.mark.parametrize("text, fragment", [
    ("1.5 0 0 0\n0 1.5 0 0\n0 0 1.5 0\n0 0 0 1", "not a rotation"),
    ("-1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1", "not a rotation"),  # reflection
    ("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1e-3 1", "bottom row"),
    ("1 0 0 0\n0 1 0 0\n0 0 1 0", "16 numbers"),
    ("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 nan", "non-finite"),
])
def test_matrix4_errors(text, fragment):
    with pytest.raises(ParseError, match=fragment):
        traj_io.parse_matrix4_frame(text)


def test_matrix4_small_drift_is_projected(caplog):
    drift = "1.00002 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1"
    with caplog.at_level("INFO", logger="posefusion"):
        pose = traj_io.parse_matrix4_frame(drift)
    assert pose.allclose(GroupPose.identity(), atol=1e-12)
    assert "projected" in caplog.text


def test_matrix4_fixture_directory():
    traj = traj_io.read_matrix4_dir(DATA / "seq")
    assert len(traj) == 3  # notes.txt does not match the pattern
    np.testing.assert_allclose(traj.timestamps, np.arange(3) / traj_io.DEFAULT_RATE)
    assert traj.poses[0].allclose(GroupPose.identity(), atol=0)
    expected = GroupPose([np.sqrt(0.5), 0, 0, np.sqrt(0.5)], [0.5, -0.25, 1.0])
    assert traj.poses[1].allclose(expected, atol=1e-15)
    assert traj.poses[2].allclose(GroupPose([1, 0, 0, 0], [1, 2, 3]), atol=1e-12)
    # and the frames survive a trip through TUM
    assert_same(traj, traj_io.parse_tum(traj_io.write_tum(traj)))
