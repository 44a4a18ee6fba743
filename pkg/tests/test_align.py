import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clawlink.core import GripState, Pose6D, Wrench6D
from clawlink.errors import ConfigError
from clawlink.proto.framing import Topic
from clawlink.sync import StreamBuffer, align, nearest_within

POSE = int(Topic.POSE)
GRIP = int(Topic.GRIP_STATE)
WL = int(Topic.WRENCH_L)
WR = int(Topic.WRENCH_R)


def pose_at(x=0.0):
    return Pose6D(np.array([x, 0, 0]), np.array([1.0, 0, 0, 0]))


def grip_at(w=0.05):
    return GripState(width=w, setpoint=w, motor_angle=0.5, grip_force=0.0,
                     stalled=False)


def make_buffers(ts_map):
    """ts_map: topic -> list of timestamps; payload encodes its timestamp so
    tests can check which sample got picked."""
    buffers = {}
    for topic, stamps in ts_map.items():
        buf = StreamBuffer(topic)
        for t in stamps:
            if topic == POSE:
                buf.append(t, pose_at(float(t)))
            elif topic == GRIP:
                buf.append(t, grip_at(0.01 + t * 1e-9))
            else:
                buf.append(t, Wrench6D(np.array([float(t), 0, 0]), np.zeros(3)))
        buffers[topic] = buf
    return buffers


def oracle_nearest(stamps, t, eps):
    """Exhaustive search; ties resolved to the earlier sample."""
    best = None
    for i, s in enumerate(stamps):
        d = abs(s - t)
        if d <= eps and (best is None or d < best[0]):
            best = (d, i)
    return None if best is None else best[1]


def test_identical_timestamps_zero_dt():
    stamps = [0, 10_000_000, 20_000_000]
    buffers = make_buffers({POSE: stamps, GRIP: stamps, WL: stamps, WR: stamps})
    frames, drops = align(buffers, POSE, epsilon_ns=5_000_000)
    assert len(frames) == 3
    for f in frames:
        assert all(v == 0 for v in f.dt.values())
    assert drops == {}


def test_hand_case_nearest_pairs():
    # reference {0,10,20}, stream {1,9,22}, eps=3 -> pairs (0,1),(10,9),(20,22)
    buffers = make_buffers({POSE: [0, 10, 20], GRIP: [1, 9, 22],
                            WL: [0, 10, 20], WR: [0, 10, 20]})
    frames, drops = align(buffers, POSE, epsilon_ns=3)
    assert len(frames) == 3
    assert [f.dt["grip"] for f in frames] == [1, -1, 2]
    assert drops == {}


def test_missing_sample_drops_frame_and_counts():
    buffers = make_buffers({POSE: [0, 10, 20], GRIP: [1, 9],
                            WL: [0, 10, 20], WR: [0, 10, 20]})
    frames, drops = align(buffers, POSE, epsilon_ns=3)
    assert len(frames) == 2
    assert drops == {"grip": 1}


def test_tie_prefers_earlier_sample():
    buffers = make_buffers({POSE: [10], GRIP: [5, 15],
                            WL: [10], WR: [10]})
    frames, _ = align(buffers, POSE, epsilon_ns=10)
    assert frames[0].dt["grip"] == -5  # earlier of the two equidistant


def test_unknown_reference_topic_rejected():
    buffers = make_buffers({GRIP: [0]})
    with pytest.raises(ConfigError):
        align(buffers, POSE, epsilon_ns=10)
    with pytest.raises(ConfigError):
        align(make_buffers({POSE: [0]}), POSE, epsilon_ns=0)


def test_grip_reference_with_pose_interpolation():
    # reference grip at t=15 between pose samples at 10 and 20
    buffers = make_buffers({POSE: [10, 20], GRIP: [15], WL: [15], WR: [15]})
    frames, _ = align(buffers, GRIP, epsilon_ns=6, pose_mode="interpolate")
    assert len(frames) == 1
    assert frames[0].pose.position[0] == pytest.approx(15.0)
    assert frames[0].dt["pose"] == 0
    nearest, _ = align(buffers, GRIP, epsilon_ns=6, pose_mode="nearest")
    assert nearest[0].pose.position[0] in (10.0, 20.0)


def test_optional_images_forward_fill():
    from clawlink.proto.payloads import ImageFrame
    buffers = make_buffers({POSE: [0, 10, 20], GRIP: [0, 10, 20],
                            WL: [0, 10, 20], WR: [0, 10, 20]})
    rgb = StreamBuffer(int(Topic.RGB))
    rgb.append(0, ImageFrame(2, 2, 3, 0, bytes(12)))
    buffers[int(Topic.RGB)] = rgb
    frames, _ = align(buffers, POSE, epsilon_ns=3, forward_fill_images=True)
    assert all(f.rgb is not None for f in frames)
    frames2, _ = align(buffers, POSE, epsilon_ns=3, forward_fill_images=False)
    assert frames2[0].rgb is not None
    assert frames2[1].rgb is None


def test_stream_buffer_enforces_monotonic_timestamps():
    buf = StreamBuffer(POSE, capacity=4)
    buf.append(10, "a")
    buf.append(5, "b")  # regression clamped, counted
    assert buf.timestamps() == [10, 10]
    assert buf.clamped == 1
    for i in range(10):
        buf.append(20 + i, str(i))
    assert len(buf) == 4  # ring capacity


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_aligner_matches_exhaustive_oracle(data):
    eps = data.draw(st.integers(1, 30))
    ref = sorted(data.draw(st.lists(st.integers(0, 100), min_size=1,
                                    max_size=15)))
    topics = {POSE: ref}
    for t in (GRIP, WL, WR):
        topics[t] = sorted(data.draw(st.lists(st.integers(0, 100),
                                              max_size=15)))
    buffers = make_buffers(topics)
    frames, drops = align(buffers, POSE, epsilon_ns=eps)

    # oracle pass
    expected = []
    exp_drops = {}
    for t_ref in ref:
        row = {}
        ok = True
        for topic, fld in ((GRIP, "grip"), (WL, "wrench_l"), (WR, "wrench_r")):
            j = oracle_nearest(topics[topic], t_ref, eps)
            if j is None:
                exp_drops[fld] = exp_drops.get(fld, 0) + 1
                ok = False
                break
            row[fld] = topics[topic][j] - t_ref
        if ok:
            expected.append((t_ref, row))

    assert len(frames) == len(expected)
    for f, (t_ref, row) in zip(frames, expected):
        assert f.ts_ref == t_ref
        for fld, dt in row.items():
            assert f.dt[fld] == dt
        assert abs(f.dt["grip"]) <= eps
    assert drops == exp_drops
