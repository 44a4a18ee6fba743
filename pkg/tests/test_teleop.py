import math

import numpy as np
import pytest

from clawlink.core import Pose6D, quat_about_axis, quat_angle
from clawlink.errors import ConfigError, InsufficientDataError, RangeError
from clawlink.teleop import (FollowerController, TeleopSession, latency_report,
                             mirror_step)

CTRL = FollowerController(max_translation_step=0.002, max_rotation_step=0.01,
                          tick_period_s=0.01)


def pose(x=0.0, y=0.0, z=0.0, quat=None):
    return Pose6D(np.array([x, y, z]),
                  np.array(quat if quat is not None else [1.0, 0, 0, 0]))


def test_identical_poses_zero_step():
    target, grip = mirror_step(pose(0.5), 0.04, pose(0.5), CTRL)
    assert np.array_equal(target.position, [0.5, 0, 0])
    assert grip == 0.04


def test_translation_clamped_to_max_step():
    target, _ = mirror_step(pose(1.0), 0.04, pose(0.0), CTRL)
    assert target.position == pytest.approx([0.002, 0, 0])


def test_translation_inside_step_goes_exact():
    target, _ = mirror_step(pose(0.0015), 0.04, pose(0.0), CTRL)
    assert target.position == pytest.approx([0.0015, 0, 0])


def test_rotation_clamped_via_geodesic_fraction():
    leader = pose(quat=quat_about_axis([0, 0, 1], math.pi / 2))
    target, _ = mirror_step(leader, 0.04, pose(), CTRL)
    angle = quat_angle(np.array([1.0, 0, 0, 0]), target.orientation)
    assert angle == pytest.approx(0.01, abs=1e-12)
    axis = target.orientation[1:] / np.linalg.norm(target.orientation[1:])
    assert axis == pytest.approx([0, 0, 1])


def test_grip_passthrough_flag():
    no_grip = FollowerController(grip_passthrough=False)
    _, grip = mirror_step(pose(), 0.04, pose(), no_grip)
    assert grip is None


def test_non_finite_leader_pose_rejected():
    bad = Pose6D.__new__(Pose6D)
    object.__setattr__(bad, "position", np.array([np.nan, 0, 0]))
    object.__setattr__(bad, "orientation", np.array([1.0, 0, 0, 0]))
    with pytest.raises(RangeError):
        mirror_step(bad, 0.04, pose(), CTRL)


def test_session_state_machine():
    s = TeleopSession(leader_id="a", follower_id="b")
    assert s.state == "idle"
    s.add_latency(5)  # ignored while idle
    assert s.latency_samples_ns == []
    s.activate(123)
    assert s.state == "active" and s.started_at == 123
    s.add_latency(5)
    s.stop()
    assert s.state == "stopped"
    with pytest.raises(ConfigError):
        s.activate(0)
    with pytest.raises(ConfigError):
        s.stop()


def test_latency_report_requires_20_samples():
    s = TeleopSession(leader_id="a", follower_id="b")
    s.activate(0)
    for _ in range(19):
        s.add_latency(1000)
    with pytest.raises(InsufficientDataError):
        latency_report(s)


def test_latency_report_nearest_rank_percentile():
    # delays 10..100 ms: p95 by nearest rank on 10 samples is the maximum
    s = TeleopSession(leader_id="a", follower_id="b")
    s.activate(0)
    ms = 1_000_000
    samples = [d * 10 * ms for d in range(1, 11)] * 2  # 20 samples
    for x in samples:
        s.add_latency(x)
    rep = latency_report(s)
    assert rep["p95_ns"] == 100 * ms
    assert rep["max_ns"] == 100 * ms
    assert rep["mean_ns"] == pytest.approx(55 * ms)
    assert rep["count"] == 20


def test_latency_report_constant_delay():
    s = TeleopSession(leader_id="a", follower_id="b")
    s.activate(0)
    for _ in range(50):
        s.add_latency(20_000_000)
    rep = latency_report(s)
    assert rep["mean_ns"] == 20_000_000
    assert rep["p95_ns"] == 20_000_000
    assert rep["jitter_std_ns"] == 0.0


def test_controller_validation():
    with pytest.raises(ConfigError):
        FollowerController(max_translation_step=0.0)
    with pytest.raises(ConfigError):
        FollowerController(tick_period_s=-1.0)
