import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clawlink.core import (FourBarParams, Pose6D, fourbar_fingertip_path,
                           fourbar_jaw_force, fourbar_theta, fourbar_width,
                           pose_compose, pose_delta, pose_interpolate,
                           pose_inverse, quat_about_axis, quat_angle,
                           quat_canonical, quat_mul)
from clawlink.errors import RangeError


def random_pose(rng):
    q = rng.normal(size=4)
    return Pose6D(rng.normal(size=3), q)


def test_compose_identity():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    out = pose_compose(Pose6D.identity(), p)
    assert np.allclose(out.position, p.position)
    assert np.allclose(out.orientation, p.orientation)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = random_pose(rng)
        out = pose_compose(p, pose_inverse(p))
        assert np.allclose(out.position, np.zeros(3), atol=1e-9)
        assert quat_angle(out.orientation, np.array([1.0, 0, 0, 0])) < 1e-9


def test_compose_two_quarter_turns_about_z():
    # hand multiplication: (c,0,0,s)^2 with c=s=cos45 gives (0,0,0,1)
    quarter = Pose6D(np.zeros(3), quat_about_axis([0, 0, 1], math.pi / 2))
    half = pose_compose(quarter, quarter)
    assert np.allclose(half.orientation, [0.0, 0.0, 0.0, 1.0], atol=1e-12)


def test_interpolate_endpoints_exact():
    rng = np.random.default_rng(2)
    a, b = random_pose(rng), random_pose(rng)
    assert pose_interpolate(a, b, 0.0) is a
    assert pose_interpolate(a, b, 1.0) is b


def test_interpolate_half_is_45_degrees():
    a = Pose6D.identity()
    b = Pose6D(np.zeros(3), quat_about_axis([0, 0, 1], math.pi / 2))
    mid = pose_interpolate(a, b, 0.5)
    expected = quat_about_axis([0, 0, 1], math.pi / 4)
    assert np.allclose(mid.orientation, expected, atol=1e-12)


@pytest.mark.parametrize("t", [-0.1, 1.01, 5.0])
def test_interpolate_rejects_out_of_range(t):
    a = Pose6D.identity()
    with pytest.raises(RangeError):
        pose_interpolate(a, a, t)


def test_pose_delta_reconstructs():
    rng = np.random.default_rng(3)
    a, b = random_pose(rng), random_pose(rng)
    d = pose_delta(a, b)
    back = pose_compose(a, d)
    assert np.allclose(back.position, b.position, atol=1e-9)
    assert quat_angle(back.orientation, b.orientation) < 1e-9


def test_quaternion_norm_preserved_over_long_chain():
    # 1e5 random composes must keep the norm pinned at 1 within 1e-9
    rng = np.random.default_rng(4)
    p = Pose6D.identity()
    for _ in range(100_000):
        q = rng.normal(size=4)
        step = Pose6D(rng.normal(size=3) * 0.01, q)
        p = pose_compose(p, step)
        n = np.linalg.norm(p.orientation)
        assert abs(n - 1.0) < 1e-9
    assert p.orientation[np.nonzero(p.orientation)[0][0]] > 0  # canonical sign


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_canonical_quaternion_first_nonzero_positive(w, x, y, z):
    q = np.array([w, x, y, z])
    if np.linalg.norm(q) < 1e-6:
        return
    c = quat_canonical(q)
    assert abs(np.linalg.norm(c) - 1.0) < 1e-12
    nz = c[np.nonzero(c)[0][0]]
    assert nz > 0


# ---------------------------------------------------------------------------
# four-bar kinematics


PARAMS = FourBarParams(link_length=0.05, closed_width=0.01)


def test_width_closed_is_w0():
    assert fourbar_width(0.0, PARAMS) == pytest.approx(0.01)


def test_width_fully_open():
    # w0 + 2 L (1 - cos(pi/2)) = 0.01 + 2*0.05 = 0.11
    assert fourbar_width(math.pi / 2, PARAMS) == pytest.approx(0.11)


def test_width_derivative_matches_finite_difference():
    h = 1e-7
    for theta in np.linspace(0.05, math.pi / 2 - 0.05, 17):
        num = (fourbar_width(theta + h, PARAMS) - fourbar_width(theta - h, PARAMS)) / (2 * h)
        analytic = 2 * PARAMS.link_length * math.sin(theta)
        assert num == pytest.approx(analytic, abs=1e-6)


def test_width_strictly_increasing():
    thetas = np.linspace(1e-4, math.pi / 2, 300)
    widths = [fourbar_width(t, PARAMS) for t in thetas]
    assert all(b > a for a, b in zip(widths, widths[1:]))


def test_theta_inverse_roundtrip():
    for theta in np.linspace(0.0, math.pi / 2, 31):
        w = fourbar_width(theta, PARAMS)
        assert fourbar_theta(w, PARAMS) == pytest.approx(theta, abs=1e-12)


def test_width_rejects_out_of_range_theta():
    with pytest.raises(RangeError):
        fourbar_width(-0.01, PARAMS)
    with pytest.raises(RangeError):
        fourbar_width(math.pi / 2 + 0.01, PARAMS)


def test_jaw_force_zero_torque():
    assert fourbar_jaw_force(0.3, 0.0, PARAMS, force_cap=100.0) == 0.0


def test_jaw_force_hand_value():
    # tau / (L sin theta) = 0.5 / (0.05 * 1) = 10 N at full open
    assert fourbar_jaw_force(math.pi / 2, 0.5, PARAMS, force_cap=100.0) == pytest.approx(10.0)


def test_jaw_force_clamped_at_closure():
    assert fourbar_jaw_force(0.0, 0.5, PARAMS, force_cap=42.0) == 42.0


def test_jaw_force_non_increasing_sweep():
    # mechanical advantage is highest near closure
    thetas = np.linspace(1e-3, math.pi / 2, 200)
    forces = [fourbar_jaw_force(t, 0.5, PARAMS, force_cap=1e6) for t in thetas]
    assert all(a >= b for a, b in zip(forces, forces[1:]))
    assert forces[0] >= max(forces)


def test_fingertip_path_is_arc_with_constant_orientation():
    # (x - 0)^2 ... the path (L(1-cos), L sin) lies on a circle of radius L
    L = PARAMS.link_length
    for theta in np.linspace(0.0, math.pi / 2, 20):
        x, z = fourbar_fingertip_path(theta, PARAMS)
        assert (x - L) ** 2 + z**2 == pytest.approx(L**2)


@settings(max_examples=50)
@given(st.floats(0.001, math.pi / 2 - 0.001), st.floats(0.001, math.pi / 2 - 0.001))
def test_advantage_property(theta_a, theta_b):
    lo, hi = sorted([theta_a, theta_b])
    f_lo = fourbar_jaw_force(lo, 0.5, PARAMS, force_cap=1e9)
    f_hi = fourbar_jaw_force(hi, 0.5, PARAMS, force_cap=1e9)
    assert f_lo >= f_hi
    assert fourbar_width(lo, PARAMS) <= fourbar_width(hi, PARAMS)


def test_fourbar_params_validation():
    with pytest.raises(RangeError):
        FourBarParams(link_length=0.0)
    with pytest.raises(RangeError):
        FourBarParams(theta_min=0.4, theta_max=0.2)
