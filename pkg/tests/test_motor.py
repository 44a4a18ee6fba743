import math

import pytest
from hypothesis import given, settings, strategies as st

from clawlink.core import FourBarParams, GripState, fourbar_theta
from clawlink.nodes import MotorModel, motor_step


def make_state(width, model):
    return GripState(width=width, setpoint=width,
                     motor_angle=fourbar_theta(width, model.fourbar),
                     grip_force=0.0, stalled=False)


def run_to_rest(model, state, setpoint, max_ticks=10_000, ext=0.0):
    history = [state]
    for _ in range(max_ticks):
        new = motor_step(model, history[-1], setpoint, ext, model.dt_s)
        history.append(new)
        if new.width == history[-2].width and len(history) > 2:
            break
    return history


def test_setpoint_equal_width_is_noop():
    m = MotorModel()
    s = make_state(0.05, m)
    out = motor_step(m, s, 0.05, 0.0, m.dt_s)
    assert out.width == 0.05
    assert not out.stalled
    assert out.grip_force == 0.0


def test_slew_time_matches_distance_over_vmax():
    # 0.08 -> 0.02 at v_max=0.1 m/s takes 0.6 s = 60 ticks of 10 ms
    m = MotorModel(v_max=0.1, dt_s=0.01)
    s = make_state(0.08, m)
    for tick in range(1, 61):
        s = motor_step(m, s, 0.02, 0.0, m.dt_s)
    assert s.width == pytest.approx(0.02, abs=1e-12)
    # one tick earlier it must not have arrived yet
    s2 = make_state(0.08, m)
    for _ in range(59):
        s2 = motor_step(m, s2, 0.02, 0.0, m.dt_s)
    assert s2.width > 0.02


def test_obstacle_stall_force_hand_value():
    # obstacle 0.05, setpoint 0.02, stiffness 500, cap 20 -> 15 N
    m = MotorModel(contact_stiffness=500.0, force_cap=20.0,
                   obstacle_width=0.05)
    hist = run_to_rest(m, make_state(0.08, m), 0.02)
    final = hist[-1]
    assert final.width == 0.05
    assert final.stalled
    # bit-exact against the defining formula, approximate against 15 N
    assert final.grip_force == min(20.0, 500.0 * (0.05 - 0.02))
    assert final.grip_force == pytest.approx(15.0)


def test_stall_happens_within_one_tick_of_contact():
    m = MotorModel(v_max=0.1, dt_s=0.01, obstacle_width=0.05)
    s = make_state(0.08, m)
    for _ in range(1000):
        new = motor_step(m, s, 0.02, 0.0, m.dt_s)
        if new.stalled:
            # the stall tick starts within one step of the obstacle and
            # lands exactly on it
            assert new.width == 0.05
            assert s.width >= 0.05
            assert s.width - 0.05 <= m.v_max * m.dt_s + 1e-15
            return
        s = new
    pytest.fail("never stalled")


def test_stall_force_capped():
    m = MotorModel(contact_stiffness=500.0, force_cap=8.0, obstacle_width=0.05)
    final = run_to_rest(m, make_state(0.08, m), 0.01)[-1]
    assert final.grip_force == 8.0


def test_stalled_never_at_setpoint():
    m = MotorModel(obstacle_width=0.05)
    for sp in (0.0, 0.01, 0.03, 0.049):
        final = run_to_rest(m, make_state(0.08, m), sp)[-1]
        if final.stalled:
            assert abs(final.width - final.setpoint) > 1e-6


def test_backdrive_overrides_motion():
    m = MotorModel(backdrive_threshold=5.0, v_max=0.1, dt_s=0.01)
    s = make_state(0.05, m)
    out = motor_step(m, s, 0.02, external_force=10.0, dt=m.dt_s)
    # moving away from the setpoint, i.e. opening
    assert out.width == pytest.approx(0.051)
    assert not out.stalled
    below = motor_step(m, s, 0.02, external_force=4.9, dt=m.dt_s)
    assert below.width < 0.05  # under threshold: normal closing motion


def test_backdrive_respects_width_limits():
    m = MotorModel()
    w_max = m.fourbar.w_max
    s = make_state(w_max, m)
    out = motor_step(m, s, 0.02, external_force=50.0, dt=m.dt_s)
    assert out.width <= w_max


def test_width_lipschitz_over_square_wave():
    # commanded 0.02/0.06 square wave at 0.5 Hz traces a trapezoid
    m = MotorModel(v_max=0.1, dt_s=0.01)
    s = make_state(0.06, m)
    widths = [s.width]
    for tick in range(600):  # 6 s
        t = tick * m.dt_s
        sp = 0.02 if (t % 2.0) < 1.0 else 0.06
        s = motor_step(m, s, sp, 0.0, m.dt_s)
        widths.append(s.width)
    step = m.v_max * m.dt_s
    for a, b in zip(widths, widths[1:]):
        assert abs(b - a) <= step + 1e-15
    assert min(widths) == pytest.approx(0.02, abs=1e-12)
    assert max(widths) == pytest.approx(0.06, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    width=st.floats(0.01, 0.11),
    setpoint=st.floats(-0.05, 0.2),
    ext=st.floats(0, 30),
    obstacle=st.one_of(st.none(), st.floats(0.02, 0.1)),
)
def test_motor_step_invariants(width, setpoint, ext, obstacle):
    m = MotorModel(obstacle_width=obstacle)
    s = make_state(width, m)
    out = motor_step(m, s, setpoint, ext, m.dt_s)
    assert abs(out.width - s.width) <= m.v_max * m.dt_s + 1e-15
    assert m.fourbar.w_min <= out.width <= m.fourbar.w_max
    assert out.grip_force >= 0.0
    assert out.grip_force <= m.force_cap
    if out.stalled:
        assert abs(out.width - out.setpoint) > 1e-9
    assert m.fourbar.theta_min <= out.motor_angle <= m.fourbar.theta_max
