import numpy as np
import pytest

from clawlink.core import GripState, Pose6D, Wrench6D
from clawlink.errors import CorruptFileError, InsufficientDataError, OverlapError, VersionError
from clawlink.proto.payloads import ImageFrame
from clawlink.sync import (AlignedFrame, Episode, EpisodeHeader,
                           discrepancy_log, load, record)


def make_frame(ts, x=0.0, width=0.05, with_images=False, quat=None):
    rgb = ImageFrame(4, 2, 3, ts, bytes(range(24))) if with_images else None
    depth = ImageFrame(4, 2, 2, ts, bytes(16)) if with_images else None
    return AlignedFrame(
        ts_ref=ts,
        pose=Pose6D(np.array([x, 0.1, 0.2]),
                    np.array(quat if quat is not None else [1.0, 0, 0, 0])),
        grip=GripState(width=width, setpoint=width, motor_angle=0.3,
                       grip_force=1.5, stalled=False),
        wrench_l=Wrench6D(np.array([1.0, 0, 0]), np.array([0, 0.01, 0])),
        wrench_r=Wrench6D(np.array([0, 2.0, 0]), np.zeros(3)),
        rgb=rgb, depth=depth,
        dt={"pose": 0, "grip": -3, "wrench_l": 5, "wrench_r": -7,
            "rgb": 1, "depth": 2} if with_images else
           {"pose": 0, "grip": -3, "wrench_l": 5, "wrench_r": -7})


def make_episode(n, with_images=False):
    frames = [make_frame(1000 + i * 100, x=i * 0.01, with_images=with_images)
              for i in range(n)]
    return Episode(header=EpisodeHeader(config_digest="abc123",
                                        rates_hz={"pose": 25.0}, seed=7),
                   frames=frames, drop_counts={"grip": 2})


def test_empty_episode_roundtrip(tmp_path):
    path = tmp_path / "empty.mgcl"
    record(Episode(header=EpisodeHeader(), frames=[]), path)
    ep = load(path)
    assert len(ep.frames) == 0
    assert not ep.aborted


def test_roundtrip_preserves_everything(tmp_path):
    path = tmp_path / "ep.mgcl"
    ep0 = make_episode(20, with_images=True)
    record(ep0, path)
    ep = load(path)
    assert len(ep.frames) == 20
    assert ep.header.config_digest == "abc123"
    assert ep.header.seed == 7
    assert ep.drop_counts == {"grip": 2}
    for a, b in zip(ep0.frames, ep.frames):
        assert a.ts_ref == b.ts_ref
        assert np.array_equal(a.pose.position, b.pose.position)
        assert np.array_equal(a.pose.orientation, b.pose.orientation)
        assert a.grip == b.grip
        assert np.array_equal(a.wrench_l.as_vector(), b.wrench_l.as_vector())
        assert a.rgb == b.rgb and a.depth == b.depth
        assert a.dt == b.dt


def test_re_record_is_byte_identical(tmp_path):
    ep = make_episode(100, with_images=True)
    record(ep, tmp_path / "a.mgcl")
    loaded = load(tmp_path / "a.mgcl")
    record(loaded, tmp_path / "b.mgcl")
    assert (tmp_path / "a.mgcl").read_bytes() == (tmp_path / "b.mgcl").read_bytes()


def test_every_flipped_payload_byte_detected(tmp_path):
    path = tmp_path / "ep.mgcl"
    record(make_episode(3), path)
    blob = bytearray(path.read_bytes())
    # flip one bit in a sample of positions across the whole file
    for pos in range(4, len(blob), 97):
        mutated = bytearray(blob)
        mutated[pos] ^= 0x40
        (tmp_path / "bad.mgcl").write_bytes(bytes(mutated))
        with pytest.raises((CorruptFileError, VersionError)):
            load(tmp_path / "bad.mgcl")


def test_corrupt_error_carries_offset(tmp_path):
    path = tmp_path / "ep.mgcl"
    record(make_episode(2), path)
    blob = bytearray(path.read_bytes())
    blob[-10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptFileError) as ei:
        load(path)
    assert ei.value.byte_offset is not None


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "ep.mgcl"
    record(make_episode(1), path)
    blob = bytearray(path.read_bytes())
    bad = bytearray(blob)
    bad[0] = ord("X")
    path.write_bytes(bytes(bad))
    with pytest.raises(CorruptFileError):
        load(path)
    # valid CRC but unknown version
    import struct, zlib
    v2 = bytearray(blob[:-4])
    v2[4:6] = struct.pack("<H", 9)
    v2 += struct.pack("<I", zlib.crc32(bytes(v2)))
    path.write_bytes(bytes(v2))
    with pytest.raises(VersionError):
        load(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "ep.mgcl"
    record(make_episode(5), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CorruptFileError):
        load(path)


def test_aborted_flag_roundtrip(tmp_path):
    ep = make_episode(4)
    ep.aborted = True
    record(ep, tmp_path / "ab.mgcl")
    assert load(tmp_path / "ab.mgcl").aborted


# ---------------------------------------------------------------------------
# discrepancy


def test_discrepancy_episode_vs_itself_is_zero():
    ep = make_episode(10)
    rep = discrepancy_log(ep, ep)
    s = rep.summary()
    assert s["position"]["max"] == 0.0
    assert s["orientation"]["max"] == 0.0
    assert s["grip"]["max"] == 0.0
    assert all(v == 0.0 for v in s["wrench_l_per_axis_mean"])


def test_discrepancy_constant_position_offset():
    a = make_episode(10)
    shifted = Episode(header=a.header, frames=[
        AlignedFrame(ts_ref=f.ts_ref,
                     pose=Pose6D(f.pose.position + [0.01, 0, 0],
                                 f.pose.orientation),
                     grip=f.grip, wrench_l=f.wrench_l, wrench_r=f.wrench_r,
                     dt=f.dt)
        for f in a.frames])
    rep = discrepancy_log(a, shifted)
    assert all(e == pytest.approx(0.01) for e in rep.position_err_m)
    assert all(e == 0.0 for e in rep.orientation_err_rad)


def test_discrepancy_quarter_turn():
    import math
    a = make_episode(6)
    q = [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)]
    rotated = Episode(header=a.header, frames=[
        AlignedFrame(ts_ref=f.ts_ref,
                     pose=Pose6D(f.pose.position, np.array(q)),
                     grip=f.grip, wrench_l=f.wrench_l, wrench_r=f.wrench_r,
                     dt=f.dt)
        for f in a.frames])
    rep = discrepancy_log(a, rotated)
    assert all(e == pytest.approx(math.pi / 2) for e in rep.orientation_err_rad)


def test_discrepancy_requires_overlap():
    a = make_episode(5)  # ts 1000..1400
    later = Episode(header=a.header, frames=[
        make_frame(10_000 + i * 100) for i in range(5)])
    with pytest.raises(OverlapError):
        discrepancy_log(a, later)
    with pytest.raises(InsufficientDataError):
        discrepancy_log(a, Episode(header=a.header, frames=[]))
