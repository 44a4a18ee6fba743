"""Stream alignment, episode record/replay and behavioral cloning.

The offline aligner snaps every stream to the reference topic's timestamps
by nearest-neighbor within a tolerance (ties to the earlier sample), which
is exactly checkable against an exhaustive-search oracle.  Episodes persist
in a self-validating binary format (CRC32 over the whole body), and the
k-NN policy closes the demonstration-to-deployment loop: in virtual time a
seeded demo, its recording, a replay and the replay's recording are all
bit-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (NS_PER_SEC, GripState, Pose6D, Wrench6D, pose_compose,
                   pose_delta, pose_interpolate, quat_angle, quat_slerp)
from .errors import (ClawError, ConfigError, CorruptFileError,
                     InsufficientDataError, OverlapError, RangeError,
                     VersionError)
from .proto import payloads
from .proto.framing import Topic
from .proto.payloads import ImageFrame
from .runtime import NodeConfig, NodeContext
from .nodes import NodeLogic, SyncClient, TrajectoryScript, control_message

DEFAULT_EPS_NS = 25_000_000  # 25 ms: half the slowest required period, with margin

REQUIRED_FIELDS = ("pose", "grip", "wrench_l", "wrench_r")
OPTIONAL_FIELDS = ("rgb", "depth")

FIELD_TOPICS = {
    "pose": int(Topic.POSE),
    "grip": int(Topic.GRIP_STATE),
    "wrench_l": int(Topic.WRENCH_L),
    "wrench_r": int(Topic.WRENCH_R),
    "rgb": int(Topic.RGB),
    "depth": int(Topic.DEPTH),
}
TOPIC_FIELDS = {v: k for k, v in FIELD_TOPICS.items()}


# ---------------------------------------------------------------------------
# buffers and alignment

class StreamBuffer:
    """Ring of (reference-clock timestamp, decoded payload) for one topic."""

    def __init__(self, topic: int, capacity: int = 100_000):
        self.topic = topic
        self.capacity = capacity
        self.entries: deque[tuple[int, object]] = deque(maxlen=capacity)
        self.clamped = 0  # rebased stamps forced monotonic (offset jitter)

    def append(self, ts_ref: int, payload: object) -> None:
        if self.entries and ts_ref < self.entries[-1][0]:
            ts_ref = self.entries[-1][0]
            self.clamped += 1
        self.entries.append((ts_ref, payload))

    def timestamps(self) -> list[int]:
        return [t for t, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class AlignedFrame:
    """One synchronized multi-modal sample at a reference timestamp."""

    ts_ref: int
    pose: Pose6D
    grip: GripState
    wrench_l: Wrench6D
    wrench_r: Wrench6D
    rgb: ImageFrame | None = None
    depth: ImageFrame | None = None
    dt: dict = field(default_factory=dict)  # field -> signed ns offset


def nearest_within(timestamps, t: int, eps: int) -> int | None:
    """Index of the sample minimizing |ts - t| within eps; ties prefer the
    earlier sample.  Binary search over the (sorted) buffer order."""
    n = len(timestamps)
    if n == 0:
        return None
    import bisect
    i = bisect.bisect_left(timestamps, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < n:
            d = abs(timestamps[j] - t)
            if d <= eps and (best is None or d < best[0]):
                best = (d, j)
    return None if best is None else best[1]


def align(buffers: dict[int, StreamBuffer], reference_topic: int,
          epsilon_ns: int = DEFAULT_EPS_NS, pose_mode: str = "nearest",
          forward_fill_images: bool = False):
    """Offline alignment of complete buffers.

    Returns (frames, drop_counts) where drop_counts counts, per missing
    field, the reference samples that had to be discarded.
    """
    if reference_topic not in buffers:
        raise ConfigError(f"reference topic {reference_topic} not buffered")
    if epsilon_ns <= 0:
        raise ConfigError("epsilon must be > 0")
    if pose_mode not in ("nearest", "interpolate"):
        raise ConfigError(f"unknown pose mode {pose_mode!r}")

    ref_buf = buffers[reference_topic]
    cache = {t: (b.timestamps(), list(b.entries)) for t, b in buffers.items()}
    frames: list[AlignedFrame] = []
    drops: dict[str, int] = {}
    last_images: dict[str, tuple] = {}

    for ts, ref_payload in ref_buf.entries:
        values = {}
        dt = {}
        ref_field = TOPIC_FIELDS.get(reference_topic)
        if ref_field:
            values[ref_field] = ref_payload
            dt[ref_field] = 0
        missing = None
        for fld in REQUIRED_FIELDS + OPTIONAL_FIELDS:
            if fld in values:
                continue
            topic = FIELD_TOPICS[fld]
            if topic not in buffers:
                if fld in REQUIRED_FIELDS:
                    missing = fld
                    break
                continue
            stamps, entries = cache[topic]
            j = nearest_within(stamps, ts, epsilon_ns)
            if j is None:
                if fld in OPTIONAL_FIELDS:
                    if forward_fill_images and fld in last_images:
                        values[fld], dt[fld] = last_images[fld]
                    continue
                missing = fld
                break
            if fld == "pose" and pose_mode == "interpolate":
                values[fld], dt[fld] = _interpolated_pose(stamps, entries, j, ts)
            else:
                values[fld] = entries[j][1]
                dt[fld] = stamps[j] - ts
            if fld in OPTIONAL_FIELDS:
                last_images[fld] = (values[fld], dt[fld])
        if missing is not None:
            drops[missing] = drops.get(missing, 0) + 1
            continue
        frames.append(AlignedFrame(
            ts_ref=ts, pose=values["pose"], grip=values["grip"],
            wrench_l=values["wrench_l"], wrench_r=values["wrench_r"],
            rgb=values.get("rgb"), depth=values.get("depth"), dt=dt))
    return frames, drops


def _interpolated_pose(stamps, entries, j, ts):
    tj = stamps[j]
    if tj == ts:
        return entries[j][1], 0
    if tj < ts and j + 1 < len(stamps):
        a, b = j, j + 1
    elif tj > ts and j - 1 >= 0:
        a, b = j - 1, j
    else:
        return entries[j][1], tj - ts  # no bracket; nearest fallback
    ta, tb = stamps[a], stamps[b]
    if not ta <= ts <= tb or ta == tb:
        return entries[j][1], tj - ts
    u = (ts - ta) / (tb - ta)
    return pose_interpolate(entries[a][1], entries[b][1], u), 0


# ---------------------------------------------------------------------------
# episode files
#
# magic "MGCL" | version u16 | header_len u32 | header json |
# repeat: frame_len u32 | frame record |
# footer json | footer_len u32 | crc32 u32  (crc covers every prior byte)

EPISODE_MAGIC = b"MGCL"
EPISODE_VERSION = 1

_EP_HDR = struct.Struct("<4sHI")
_FRAME_FIXED = struct.Struct("<q7d4dB6d6dqqqqB")
_IMG_BLOB = struct.Struct("<qHHBI")


@dataclass
class EpisodeHeader:
    schema_version: int = EPISODE_VERSION
    config_digest: str = ""
    rates_hz: dict = field(default_factory=dict)
    start_time_ns: int = 0
    seed: int = 0
    reference_topic: int = int(Topic.POSE)
    epsilon_ns: int = DEFAULT_EPS_NS
    meta: dict = field(default_factory=dict)

    def to_json(self) -> bytes:
        return json.dumps(self.__dict__, sort_keys=True,
                          separators=(",", ":")).encode()

    @staticmethod
    def from_json(blob: bytes) -> "EpisodeHeader":
        d = json.loads(blob.decode())
        h = EpisodeHeader()
        for k, v in d.items():
            if hasattr(h, k):
                setattr(h, k, v)
        h.rates_hz = dict(d.get("rates_hz", {}))
        return h


@dataclass
class Episode:
    header: EpisodeHeader
    frames: list[AlignedFrame]
    drop_counts: dict[str, int] = field(default_factory=dict)
    aborted: bool = False

    def __len__(self) -> int:
        return len(self.frames)

    def time_range(self) -> tuple[int, int]:
        if not self.frames:
            raise InsufficientDataError("episode has no frames")
        return self.frames[0].ts_ref, self.frames[-1].ts_ref


def _encode_frame(f: AlignedFrame) -> bytes:
    flags = (1 if f.rgb is not None else 0) | (2 if f.depth is not None else 0)
    out = bytearray(_FRAME_FIXED.pack(
        f.ts_ref,
        *f.pose.position, *f.pose.orientation,
        f.grip.width, f.grip.setpoint, f.grip.motor_angle, f.grip.grip_force,
        1 if f.grip.stalled else 0,
        *f.wrench_l.force, *f.wrench_l.torque,
        *f.wrench_r.force, *f.wrench_r.torque,
        f.dt.get("pose", 0), f.dt.get("grip", 0),
        f.dt.get("wrench_l", 0), f.dt.get("wrench_r", 0),
        flags))
    for name, img in (("rgb", f.rgb), ("depth", f.depth)):
        if img is not None:
            out += _IMG_BLOB.pack(f.dt.get(name, 0), img.width, img.height,
                                  img.channels, img.seq)
            out += img.data
    return bytes(out)


def _decode_frame(blob: bytes, base_offset: int) -> AlignedFrame:
    try:
        vals = _FRAME_FIXED.unpack_from(blob)
    except struct.error:
        raise CorruptFileError("frame record too short", byte_offset=base_offset)
    ts = vals[0]
    pose = Pose6D(np.array(vals[1:4]), np.array(vals[4:8]))
    grip = GripState(width=vals[8], setpoint=vals[9], motor_angle=vals[10],
                     grip_force=vals[11], stalled=bool(vals[12]))
    wl = Wrench6D(np.array(vals[13:16]), np.array(vals[16:19]))
    wr = Wrench6D(np.array(vals[19:22]), np.array(vals[22:25]))
    dt = {"pose": vals[25], "grip": vals[26], "wrench_l": vals[27],
          "wrench_r": vals[28]}
    flags = vals[29]
    off = _FRAME_FIXED.size
    images = {}
    for name, bit in (("rgb", 1), ("depth", 2)):
        if flags & bit:
            if len(blob) < off + _IMG_BLOB.size:
                raise CorruptFileError("image blob truncated",
                                       byte_offset=base_offset + off)
            dti, w, h, c, seq = _IMG_BLOB.unpack_from(blob, off)
            off += _IMG_BLOB.size
            size = w * h * c
            if len(blob) < off + size:
                raise CorruptFileError("image data truncated",
                                       byte_offset=base_offset + off)
            images[name] = ImageFrame(width=w, height=h, channels=c, seq=seq,
                                      data=bytes(blob[off:off + size]))
            dt[name] = dti
            off += size
    if off != len(blob):
        raise CorruptFileError("frame record has trailing bytes",
                               byte_offset=base_offset + off)
    return AlignedFrame(ts_ref=ts, pose=pose, grip=grip, wrench_l=wl,
                        wrench_r=wr, rgb=images.get("rgb"),
                        depth=images.get("depth"), dt=dt)


def record(episode: Episode, path) -> None:
    """Serialize; byte-identical output for equal inputs."""
    out = bytearray()
    hdr = episode.header.to_json()
    out += _EP_HDR.pack(EPISODE_MAGIC, EPISODE_VERSION, len(hdr))
    out += hdr
    for f in episode.frames:
        rec = _encode_frame(f)
        out += struct.pack("<I", len(rec))
        out += rec
    footer = json.dumps({
        "frame_count": len(episode.frames),
        "drop_counts": {k: episode.drop_counts[k]
                        for k in sorted(episode.drop_counts)},
        "aborted": episode.aborted,
    }, sort_keys=True, separators=(",", ":")).encode()
    out += footer
    out += struct.pack("<I", len(footer))
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load(path) -> Episode:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _EP_HDR.size + 8:
        raise CorruptFileError("file shorter than minimal episode",
                               byte_offset=len(blob))
    magic, version, hdr_len = _EP_HDR.unpack_from(blob)
    if magic != EPISODE_MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}", byte_offset=0)
    if version != EPISODE_VERSION:
        raise VersionError(f"unsupported episode version {version}")
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    crc_actual = zlib.crc32(blob[:-4])
    if crc_stored != crc_actual:
        raise CorruptFileError(
            f"checksum mismatch: stored {crc_stored:#010x}, "
            f"computed {crc_actual:#010x}", byte_offset=len(blob) - 4)
    (footer_len,) = struct.unpack_from("<I", blob, len(blob) - 8)
    footer_start = len(blob) - 8 - footer_len
    if footer_start < _EP_HDR.size + hdr_len:
        raise CorruptFileError("footer overlaps header",
                               byte_offset=len(blob) - 8)
    try:
        footer = json.loads(blob[footer_start:len(blob) - 8].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"bad footer json: {e}",
                               byte_offset=footer_start) from None
    header = EpisodeHeader.from_json(blob[_EP_HDR.size:_EP_HDR.size + hdr_len])

    frames = []
    off = _EP_HDR.size + hdr_len
    while off < footer_start:
        if off + 4 > footer_start:
            raise CorruptFileError("dangling frame length", byte_offset=off)
        (flen,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + flen > footer_start:
            raise CorruptFileError("frame overruns footer", byte_offset=off)
        frames.append(_decode_frame(blob[off:off + flen], off))
        off += flen
    if footer.get("frame_count") != len(frames):
        raise CorruptFileError(
            f"footer count {footer.get('frame_count')} != {len(frames)} frames",
            byte_offset=footer_start)
    return Episode(header=header, frames=frames,
                   drop_counts=dict(footer.get("drop_counts", {})),
                   aborted=bool(footer.get("aborted", False)))


# ---------------------------------------------------------------------------
# behavioral cloning

# per-dimension scales that bring position (m), orientation (quat vector
# part), grip (m), force (N) and torque (N*m) to comparable magnitudes
DEFAULT_SCALE_WEIGHTS = np.array(
    [100.0] * 3 + [10.0] * 3 + [100.0]
    + [1.0] * 3 + [20.0] * 3 + [1.0] * 3 + [20.0] * 3)

OBS_DIM = 19


def observation_vector(f: AlignedFrame) -> np.ndarray:
    """pose (pos + quat vector part) ++ grip width ++ both wrenches."""
    return np.concatenate([
        f.pose.position, f.pose.orientation[1:], [f.grip.width],
        f.wrench_l.force, f.wrench_l.torque,
        f.wrench_r.force, f.wrench_r.torque])


@dataclass(frozen=True)
class Action:
    """Next-frame pose delta (in the current frame) plus grip setpoint."""

    delta: Pose6D
    grip_setpoint: float

    def apply(self, current: Pose6D) -> Pose6D:
        return pose_compose(current, self.delta)


class PolicyKNN:
    """Weighted-Euclidean k-NN over (observation, action) pairs with
    inverse-distance voting; an exact observation match returns its stored
    action verbatim."""

    def __init__(self, observations: np.ndarray, actions: list[Action],
                 k: int, scale_weights: np.ndarray | None = None):
        if k < 1:
            raise RangeError("k must be >= 1")
        if len(actions) == 0:
            raise InsufficientDataError("empty policy dataset")
        obs = np.asarray(observations, dtype=float)
        if obs.ndim != 2 or obs.shape[0] != len(actions):
            raise ConfigError("observations/actions shape mismatch")
        self.observations = obs
        self.actions = list(actions)
        self.k = k
        self.scale_weights = (DEFAULT_SCALE_WEIGHTS.copy()
                              if scale_weights is None
                              else np.asarray(scale_weights, dtype=float))
        if self.scale_weights.shape != (obs.shape[1],):
            raise ConfigError("scale weights dimension mismatch")
        self._scaled = obs * self.scale_weights

    def neighbors(self, obs: np.ndarray) -> list[int]:
        """Indices of the k nearest dataset points (ties by index order)."""
        q = np.asarray(obs, dtype=float) * self.scale_weights
        d = np.sqrt(((self._scaled - q) ** 2).sum(axis=1))
        k = min(self.k, len(self.actions))
        order = np.argsort(d, kind="stable")
        return [int(i) for i in order[:k]]

    def act(self, obs: np.ndarray) -> Action:
        q = np.asarray(obs, dtype=float) * self.scale_weights
        d = np.sqrt(((self._scaled - q) ** 2).sum(axis=1))
        idx = np.argsort(d, kind="stable")[:min(self.k, len(self.actions))]
        if d[idx[0]] == 0.0:
            return self.actions[int(idx[0])]
        weights = 1.0 / d[idx]
        weights = weights / weights.sum()
        pos = np.zeros(3)
        grip = 0.0
        for w, i in zip(weights, idx):
            pos += w * self.actions[int(i)].delta.position
            grip += w * self.actions[int(i)].grip_setpoint
        # orientation: chained slerp with normalized cumulative weights
        quat = self.actions[int(idx[0])].delta.orientation
        acc = weights[0]
        for w, i in zip(weights[1:], idx[1:]):
            acc += w
            quat = quat_slerp(quat, self.actions[int(i)].delta.orientation,
                              float(w / acc))
        return Action(delta=Pose6D(pos, quat), grip_setpoint=grip)


def train_bc(episodes: list[Episode], k: int = 1,
             scale_weights: np.ndarray | None = None) -> PolicyKNN:
    """Dataset: (obs_t, action_t = (pose_delta(t -> t+1), grip setpoint at
    t+1)) over consecutive frames of every episode."""
    obs_rows = []
    actions = []
    for ep in episodes:
        for a, b in zip(ep.frames, ep.frames[1:]):
            obs_rows.append(observation_vector(a))
            actions.append(Action(delta=pose_delta(a.pose, b.pose),
                                  grip_setpoint=b.grip.setpoint))
    if not actions:
        raise InsufficientDataError(
            "need at least one episode with two frames")
    return PolicyKNN(np.stack(obs_rows), actions, k, scale_weights)


def save_policy(p: PolicyKNN, path) -> None:
    np.savez(path,
             observations=p.observations,
             delta_pos=np.stack([a.delta.position for a in p.actions]),
             delta_quat=np.stack([a.delta.orientation for a in p.actions]),
             grip=np.array([a.grip_setpoint for a in p.actions]),
             k=np.array([p.k]),
             scale_weights=p.scale_weights)


def load_policy(path) -> PolicyKNN:
    z = np.load(path)
    actions = [Action(delta=Pose6D(p, q), grip_setpoint=float(g))
               for p, q, g in zip(z["delta_pos"], z["delta_quat"], z["grip"])]
    return PolicyKNN(z["observations"], actions, int(z["k"][0]),
                     z["scale_weights"])


# ---------------------------------------------------------------------------
# discrepancy report

@dataclass
class DiscrepancyReport:
    position_err_m: list[float]
    orientation_err_rad: list[float]
    grip_err_m: list[float]
    wrench_l_err: list[np.ndarray]
    wrench_r_err: list[np.ndarray]

    def summary(self) -> dict:
        def s(xs):
            arr = np.asarray(xs, dtype=float)
            return {"mean": float(arr.mean()), "max": float(arr.max())}
        wl = np.stack(self.wrench_l_err)
        wr = np.stack(self.wrench_r_err)
        return {
            "position": s(self.position_err_m),
            "orientation": s(self.orientation_err_rad),
            "grip": s(self.grip_err_m),
            "wrench_l_per_axis_mean": [float(v) for v in np.abs(wl).mean(axis=0)],
            "wrench_r_per_axis_mean": [float(v) for v in np.abs(wr).mean(axis=0)],
            "steps": len(self.position_err_m),
        }


def discrepancy_log(demo: Episode, executed: Episode) -> DiscrepancyReport:
    """Pair frames by nearest reference timestamp and report per-step
    pose/grip/wrench errors."""
    if not demo.frames or not executed.frames:
        raise InsufficientDataError("both episodes must be non-empty")
    d0, d1 = demo.time_range()
    e0, e1 = executed.time_range()
    if max(d0, e0) > min(d1, e1):
        raise OverlapError("episodes share no time range")
    ex_ts = [f.ts_ref for f in executed.frames]
    report = DiscrepancyReport([], [], [], [], [])
    import bisect
    for f in demo.frames:
        i = bisect.bisect_left(ex_ts, f.ts_ref)
        cand = [j for j in (i - 1, i) if 0 <= j < len(ex_ts)]
        j = min(cand, key=lambda j: abs(ex_ts[j] - f.ts_ref))
        g = executed.frames[j]
        report.position_err_m.append(
            float(np.linalg.norm(f.pose.position - g.pose.position)))
        report.orientation_err_rad.append(
            quat_angle(f.pose.orientation, g.pose.orientation))
        report.grip_err_m.append(abs(f.grip.width - g.grip.width))
        report.wrench_l_err.append(f.wrench_l.as_vector() - g.wrench_l.as_vector())
        report.wrench_r_err.append(f.wrench_r.as_vector() - g.wrench_r.as_vector())
    return report


# ---------------------------------------------------------------------------
# recorder node

class RecorderNode(NodeLogic):
    """Reference-domain recorder: rebases inbound stamps through its clock
    registry, buffers everything between record:begin / record:end, then
    aligns offline and writes the episode file."""

    def __init__(self, config: NodeConfig, out_path, topic_nodes: dict[int, str],
                 header: EpisodeHeader, eps_ns: int = DEFAULT_EPS_NS,
                 reference_topic: int = int(Topic.POSE),
                 pose_mode: str = "nearest", sync_period_s: float = 1.0,
                 tick_hz: float = 50.0, auto_start: bool = False):
        super().__init__(config)
        self.out_path = out_path
        self.topic_nodes = dict(topic_nodes)
        self.header = header
        self.eps_ns = eps_ns
        self.reference_topic = reference_topic
        self.pose_mode = pose_mode
        self.tick_hz = tick_hz
        self.auto_start = auto_start
        self.sync = SyncClient(config.node_id,
                               sorted(set(topic_nodes.values())),
                               period_s=sync_period_s)
        self.recording = False
        self.buffers: dict[int, StreamBuffer] = {}
        self.episodes_written: list = []
        self.aborted = False
        self._heartbeat = 0

    def subscriptions(self):
        return (Topic.CLOCK, Topic.CONTROL, Topic.POSE, Topic.GRIP_STATE,
                Topic.WRENCH_L, Topic.WRENCH_R, Topic.RGB, Topic.DEPTH)

    def on_start(self, ctx: NodeContext) -> None:
        self.sync.start(ctx)
        ctx.every(int(round(NS_PER_SEC / self.tick_hz)), self._tick)
        if self.auto_start:
            self.recording = True
            self.header.start_time_ns = ctx.now_ns()

    def _tick(self, ctx: NodeContext) -> None:
        # 1 Hz state heartbeat so observers learn the recording flag
        self._heartbeat += 1
        if self._heartbeat % max(1, int(self.tick_hz)) == 1:
            ctx.publish(Topic.CONTROL, control_message(
                "record:state", active="1" if self.recording else "0"))

    def on_message(self, ctx, entry):
        topic = entry.message.topic
        if topic == Topic.CLOCK:
            if not self.sync.handle(ctx, entry):
                super().on_message(ctx, entry)
            return
        if topic == Topic.CONTROL:
            self._handle_control(ctx, entry)
            return
        if not self.recording or topic not in TOPIC_FIELDS:
            return
        try:
            payload = self._decode(topic, entry.message.payload)
        except ClawError:
            ctx.faults += 1
            return
        offset = self.sync.offset_for(self.topic_nodes.get(topic, ""))
        ts_ref = entry.message.timestamp - offset
        self.buffers.setdefault(topic, StreamBuffer(topic)).append(ts_ref, payload)

    @staticmethod
    def _decode(topic: int, payload: bytes):
        if topic == Topic.POSE:
            return payloads.unpack_pose(payload)
        if topic == Topic.GRIP_STATE:
            return payloads.unpack_grip_state(payload)
        if topic in (Topic.WRENCH_L, Topic.WRENCH_R):
            return payloads.unpack_wrench(payload)
        return payloads.unpack_image(payload)

    def _handle_control(self, ctx, entry):
        try:
            fields = payloads.unpack_control(entry.message.payload)
        except ClawError:
            ctx.faults += 1
            return
        verb = fields.get("verb")
        if verb == "record:begin" and not self.recording:
            self.buffers = {}
            self.recording = True
            self.aborted = False
            self.header.start_time_ns = ctx.now_ns()
            ctx.publish(Topic.CONTROL,
                        control_message("record:state", active="1"))
        elif verb == "record:end" and self.recording:
            self._finalize(ctx)
        elif verb == "node-down" and self.recording:
            self.aborted = True
            self._finalize(ctx)

    def _finalize(self, ctx):
        self.recording = False
        frames, drops = align(self.buffers, self.reference_topic,
                              self.eps_ns, self.pose_mode)
        ep = Episode(header=self.header, frames=frames, drop_counts=drops,
                     aborted=self.aborted)
        record(ep, self.out_path)
        self.episodes_written.append(self.out_path)
        ctx.publish(Topic.CONTROL, control_message(
            "record:state", active="0", file=str(self.out_path),
            frames=str(len(frames)), aborted="1" if self.aborted else "0"))


# ---------------------------------------------------------------------------
# drivers: scripted demo, episode replay, policy execution

class LiveFrame:
    """Online view of the claw state for closed-loop control.

    Keeps a short history per field and assembles the frame at a requested
    grid time with the same nearest-within-eps / ties-earlier rule as the
    offline aligner, so a policy's live observations reproduce the aligned
    training frames exactly in virtual time."""

    def __init__(self, eps_ns: int = DEFAULT_EPS_NS, history: int = 16):
        self.eps_ns = eps_ns
        self.hist: dict[str, deque] = {
            f: deque(maxlen=history) for f in REQUIRED_FIELDS + OPTIONAL_FIELDS}

    def update(self, topic: int, payload, ts: int) -> None:
        fld = TOPIC_FIELDS.get(topic)
        if fld:
            self.hist[fld].append((ts, payload))

    def frame(self, at_ns: int) -> AlignedFrame | None:
        values = {}
        dt = {}
        for fld in REQUIRED_FIELDS:
            entries = self.hist[fld]
            if not entries:
                return None
            stamps = [t for t, _ in entries]
            j = nearest_within(stamps, at_ns, self.eps_ns)
            if j is None:
                return None
            values[fld] = entries[j][1]
            dt[fld] = stamps[j] - at_ns
        return AlignedFrame(
            ts_ref=at_ns, pose=values["pose"], grip=values["grip"],
            wrench_l=values["wrench_l"], wrench_r=values["wrench_r"], dt=dt)


class _DriverBase(NodeLogic):
    """Shared machinery for nodes that steer the claw: ticks run midway
    between claw state ticks (phase = period/2) so commands issued at step k
    are in every inbox before the claw's step k+1."""

    def __init__(self, config: NodeConfig, period_ns: int,
                 eps_ns: int = DEFAULT_EPS_NS):
        super().__init__(config)
        self.period_ns = period_ns
        self.live = LiveFrame(eps_ns)
        self.step = 0
        self.done = False

    def subscriptions(self):
        return (Topic.CLOCK, Topic.POSE, Topic.GRIP_STATE, Topic.WRENCH_L,
                Topic.WRENCH_R, Topic.CONTROL)

    def on_start(self, ctx: NodeContext) -> None:
        ctx.every(self.period_ns, self._tick, phase_ns=self.period_ns // 2)

    def on_message(self, ctx, entry):
        super().on_message(ctx, entry)
        topic = entry.message.topic
        if topic in TOPIC_FIELDS:
            try:
                self.live.update(topic, RecorderNode._decode(topic, entry.message.payload),
                                 entry.message.timestamp)
            except ClawError:
                ctx.faults += 1
        elif topic == Topic.CONTROL:
            try:
                fields = payloads.unpack_control(entry.message.payload)
            except ClawError:
                return
            if fields.get("verb") == "node-down":
                self.abort(ctx)

    def abort(self, ctx) -> None:
        self.done = True

    def _tick(self, ctx: NodeContext) -> None:  # pragma: no cover
        raise NotImplementedError

    def send(self, ctx, target: Pose6D, grip: float) -> None:
        ctx.publish(Topic.TELEOP_CMD, payloads.pack_teleop_cmd(
            payloads.TeleopCmd(target=target, grip_setpoint=grip, has_grip=True)))
        ctx.publish(Topic.GRIP_CMD, payloads.pack_grip_cmd(grip))


class DemoDriver(_DriverBase):
    """Publishes plan targets one step ahead: the hand of the human
    demonstrator at desk scale.

    The plan is indexed by frame number rather than wall seconds so that
    demonstrations are exactly reproducible (no time-quantization noise in
    the commanded poses)."""

    def __init__(self, config: NodeConfig, plan, period_ns: int,
                 n_steps: int):
        super().__init__(config, period_ns)
        self.plan = plan          # frame index -> (Pose6D, grip setpoint)
        self.n_steps = n_steps

    @staticmethod
    def plan_from_script(script: TrajectoryScript, period_ns: int):
        """Adapter for time-indexed trajectory scripts."""
        def plan(k: int):
            return script.sample(k * period_ns / NS_PER_SEC)
        return plan, int(script.duration_s * NS_PER_SEC // period_ns)

    def _tick(self, ctx: NodeContext) -> None:
        if self.done:
            return
        k_next = self.step + 1
        pose, grip = self.plan(k_next)
        self.send(ctx, pose, grip)
        self.step += 1
        if k_next >= self.n_steps:
            self.done = True


class ReplayDriver(_DriverBase):
    """Re-issues a recorded episode's states as commands on the original
    cadence; with the same seeds the executed claw streams are identical."""

    def __init__(self, config: NodeConfig, episode: Episode, period_ns: int):
        super().__init__(config, period_ns)
        self.episode = episode

    def _tick(self, ctx: NodeContext) -> None:
        k = self.step + 1
        self.step += 1
        if self.done or k >= len(self.episode.frames):
            self.done = True
            return
        f = self.episode.frames[k]
        self.send(ctx, f.pose, f.grip.setpoint)


class PolicyDriver(_DriverBase):
    """Closed loop at the frame rate: live frame -> policy -> command."""

    def __init__(self, config: NodeConfig, policy: PolicyKNN, period_ns: int,
                 max_steps: int | None = None):
        super().__init__(config, period_ns)
        self.policy = policy
        self.max_steps = max_steps
        self.actions_taken: list[Action] = []

    def _tick(self, ctx: NodeContext) -> None:
        if self.done:
            return
        if self.max_steps is not None and self.step >= self.max_steps:
            self.done = True
            return
        # observe at the last grid time, half a period behind this tick,
        # mirroring how the training frames were aligned (claw nodes run
        # with zero skew, so publisher stamps are already on the grid)
        grid_ns = ctx.now_ns() - self.period_ns // 2
        frame = self.live.frame(grid_ns)
        self.step += 1
        if frame is None:
            return  # waiting for first full state
        action = self.policy.act(observation_vector(frame))
        self.actions_taken.append(action)
        self.send(ctx, action.apply(frame.pose), action.grip_setpoint)
