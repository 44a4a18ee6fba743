"""Per-topic payload codecs.

One pack/unpack pair per topic, all little-endian, plus dict conversions for
the gateway's text records.  Payloads deliberately do not repeat the frame
timestamp; values that need their own clock reading (marker sets, haptic
origin stamps) carry it explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..core import GripState, Pose6D, Wrench6D
from ..errors import FormatError
from .framing import Topic

_POSE = struct.Struct("<7d")
_WRENCH = struct.Struct("<6d")
_GRIP_STATE = struct.Struct("<4dB")
_GRIP_CMD = struct.Struct("<d")
_TELEOP = struct.Struct("<8dB")
_IMG_HDR = struct.Struct("<HHBI")
_MARKERS_HDR = struct.Struct("<Iq")
_HAPTIC = struct.Struct("<12dqqB")
_CLOCK = struct.Struct("<BH")


def pack_pose(p: Pose6D) -> bytes:
    return _POSE.pack(*p.position, *p.orientation)


def unpack_pose(b: bytes) -> Pose6D:
    v = _unpack(_POSE, b, "POSE")
    return Pose6D(np.array(v[:3]), np.array(v[3:]))


def pack_wrench(w: Wrench6D) -> bytes:
    return _WRENCH.pack(*w.force, *w.torque)


def unpack_wrench(b: bytes) -> Wrench6D:
    v = _unpack(_WRENCH, b, "WRENCH")
    return Wrench6D(np.array(v[:3]), np.array(v[3:]))


def pack_grip_state(g: GripState) -> bytes:
    return _GRIP_STATE.pack(g.width, g.setpoint, g.motor_angle, g.grip_force,
                            1 if g.stalled else 0)


def unpack_grip_state(b: bytes) -> GripState:
    w, sp, ang, f, st = _unpack(_GRIP_STATE, b, "GRIP_STATE")
    return GripState(width=w, setpoint=sp, motor_angle=ang, grip_force=f,
                     stalled=bool(st))


def pack_grip_cmd(setpoint: float) -> bytes:
    return _GRIP_CMD.pack(setpoint)


def unpack_grip_cmd(b: bytes) -> float:
    return _unpack(_GRIP_CMD, b, "GRIP_CMD")[0]


@dataclass(frozen=True)
class TeleopCmd:
    """Absolute pose target plus optional grip setpoint."""

    target: Pose6D
    grip_setpoint: float = 0.0
    has_grip: bool = False


def pack_teleop_cmd(c: TeleopCmd) -> bytes:
    return _TELEOP.pack(*c.target.position, *c.target.orientation,
                        c.grip_setpoint, 1 if c.has_grip else 0)


def unpack_teleop_cmd(b: bytes) -> TeleopCmd:
    v = _unpack(_TELEOP, b, "TELEOP_CMD")
    return TeleopCmd(target=Pose6D(np.array(v[:3]), np.array(v[3:7])),
                     grip_setpoint=v[7], has_grip=bool(v[8]))


@dataclass(frozen=True)
class ImageFrame:
    """Procedural sensor frame; raw bytes, no compression."""

    width: int
    height: int
    channels: int
    seq: int
    data: bytes


def pack_image(f: ImageFrame) -> bytes:
    return _IMG_HDR.pack(f.width, f.height, f.channels, f.seq) + f.data


def unpack_image(b: bytes) -> ImageFrame:
    if len(b) < _IMG_HDR.size:
        raise FormatError("image payload too short")
    w, h, c, seq = _IMG_HDR.unpack_from(b)
    data = bytes(b[_IMG_HDR.size:])
    if len(data) != w * h * c:
        raise FormatError(f"image data {len(data)} != {w}x{h}x{c}")
    return ImageFrame(width=w, height=h, channels=c, seq=seq, data=data)


def pack_markers(ts: int, pixels: np.ndarray) -> bytes:
    pixels = np.ascontiguousarray(np.asarray(pixels, dtype="<f8").reshape(-1, 2))
    return _MARKERS_HDR.pack(pixels.shape[0], ts) + pixels.tobytes()


def unpack_markers(b: bytes) -> tuple[int, np.ndarray]:
    if len(b) < _MARKERS_HDR.size:
        raise FormatError("marker payload too short")
    count, ts = _MARKERS_HDR.unpack_from(b)
    body = b[_MARKERS_HDR.size:]
    if len(body) != count * 16:
        raise FormatError(f"marker payload {len(body)} != {count} pairs")
    return ts, np.frombuffer(body, dtype="<f8").reshape(count, 2).copy()


@dataclass(frozen=True)
class HapticFeedback:
    wrench_l: Wrench6D
    wrench_r: Wrench6D
    origin_ts_l: int
    origin_ts_r: int
    stale: bool = False


def pack_haptic(h: HapticFeedback) -> bytes:
    return _HAPTIC.pack(*h.wrench_l.force, *h.wrench_l.torque,
                        *h.wrench_r.force, *h.wrench_r.torque,
                        h.origin_ts_l, h.origin_ts_r, 1 if h.stale else 0)


def unpack_haptic(b: bytes) -> HapticFeedback:
    v = _unpack(_HAPTIC, b, "HAPTIC_FB")
    return HapticFeedback(
        wrench_l=Wrench6D(np.array(v[0:3]), np.array(v[3:6])),
        wrench_r=Wrench6D(np.array(v[6:9]), np.array(v[9:12])),
        origin_ts_l=v[12], origin_ts_r=v[13], stale=bool(v[14]))


CLOCK_REQUEST = 0
CLOCK_RESPONSE = 1


@dataclass(frozen=True)
class ClockPing:
    """Sync exchange: the requester (reference side) sends t0; the target
    node echoes it back with its own receive/send stamps t1, t2 (node
    clock).  reply_to routes responses when several requesters share the
    CLOCK topic."""

    kind: int
    node_id: str
    reply_to: str = ""
    t0: int = 0
    t1: int = 0
    t2: int = 0


def pack_clock(c: ClockPing) -> bytes:
    nid = c.node_id.encode("utf-8")
    rep = c.reply_to.encode("utf-8")
    return (_CLOCK.pack(c.kind, len(nid)) + nid
            + struct.pack("<H", len(rep)) + rep
            + struct.pack("<3q", c.t0, c.t1, c.t2))


def unpack_clock(b: bytes) -> ClockPing:
    if len(b) < _CLOCK.size:
        raise FormatError("clock payload too short")
    kind, nlen = _CLOCK.unpack_from(b)
    rest = b[_CLOCK.size:]
    if len(rest) < nlen + 2:
        raise FormatError("clock payload truncated")
    node_id = rest[:nlen].decode("utf-8")
    (rlen,) = struct.unpack_from("<H", rest, nlen)
    if len(rest) != nlen + 2 + rlen + 24:
        raise FormatError("clock payload length mismatch")
    reply_to = rest[nlen + 2:nlen + 2 + rlen].decode("utf-8")
    t0, t1, t2 = struct.unpack_from("<3q", rest, nlen + 2 + rlen)
    return ClockPing(kind=kind, node_id=node_id, reply_to=reply_to,
                     t0=t0, t1=t1, t2=t2)


def pack_control(fields: dict[str, str]) -> bytes:
    """CONTROL payloads are key=value lines, utf-8.  Verbs ride the 'verb'
    key: start, stop, record:begin, record:end, subscribe, node-down, ..."""
    for k in fields:
        if "=" in k or "\n" in k:
            raise FormatError(f"bad control key {k!r}")
    return "\n".join(f"{k}={v}" for k, v in fields.items()).encode("utf-8")


def unpack_control(b: bytes) -> dict[str, str]:
    try:
        text = b.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"control payload not utf-8: {e}") from None
    fields: dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"control line {line!r} missing '='")
        k, _, v = line.partition("=")
        fields[k] = v
    return fields


def _unpack(s: struct.Struct, b: bytes, name: str):
    try:
        return s.unpack(b)
    except struct.error as e:
        raise FormatError(f"bad {name} payload: {e}") from None


# ---------------------------------------------------------------------------
# dict views used by the gateway's text records

def payload_to_dict(topic: int, payload: bytes) -> dict:
    if topic == Topic.POSE:
        p = unpack_pose(payload)
        return {"position": list(p.position), "orientation": list(p.orientation)}
    if topic in (Topic.WRENCH_L, Topic.WRENCH_R):
        w = unpack_wrench(payload)
        return {"force": list(w.force), "torque": list(w.torque)}
    if topic == Topic.GRIP_STATE:
        g = unpack_grip_state(payload)
        return {"width": g.width, "setpoint": g.setpoint,
                "motor_angle": g.motor_angle, "grip_force": g.grip_force,
                "stalled": g.stalled}
    if topic == Topic.GRIP_CMD:
        return {"setpoint": unpack_grip_cmd(payload)}
    if topic == Topic.TELEOP_CMD:
        c = unpack_teleop_cmd(payload)
        return {"position": list(c.target.position),
                "orientation": list(c.target.orientation),
                "grip_setpoint": c.grip_setpoint, "has_grip": c.has_grip}
    if topic in (Topic.RGB, Topic.DEPTH):
        f = unpack_image(payload)
        return {"width": f.width, "height": f.height, "channels": f.channels,
                "seq": f.seq, "bytes": len(f.data)}
    if topic in (Topic.MARKERS_L, Topic.MARKERS_R):
        ts, px = unpack_markers(payload)
        return {"ts": ts, "pixels": [list(row) for row in px]}
    if topic == Topic.HAPTIC_FB:
        h = unpack_haptic(payload)
        return {"force_l": list(h.wrench_l.force), "torque_l": list(h.wrench_l.torque),
                "force_r": list(h.wrench_r.force), "torque_r": list(h.wrench_r.torque),
                "origin_ts_l": h.origin_ts_l, "origin_ts_r": h.origin_ts_r,
                "stale": h.stale}
    if topic == Topic.CONTROL:
        return dict(unpack_control(payload))
    if topic == Topic.CLOCK:
        c = unpack_clock(payload)
        return {"kind": c.kind, "node_id": c.node_id, "reply_to": c.reply_to,
                "t0": c.t0, "t1": c.t1, "t2": c.t2}
    return {"raw_len": len(payload)}
