"""Simulated device nodes: phone, motor controller and fingertip sensors.

Each node is a logic class driven by a runtime (virtual or wall-clock)
through a NodeContext.  Behavior is a deterministic function of (config,
scripts, seeds): inbound messages are drained once per tick, local state is
only touched on ticks, and all randomness comes from seeded generators.

The phone runs in one of two drive modes mirroring the hardware's two
roles: scripted (hand-held demonstration, pose comes from a trajectory
script) or follow (robot-mounted, pose targets arrive as TELEOP_CMD).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from .core import (NS_PER_SEC, FourBarParams, GripState, Pose6D, Wrench6D,
                   fourbar_theta, pose_interpolate)
from .errors import ClawError, ConfigError, ProjectionError, RangeError
from .fingertip import CameraModel, LatticeModel
from .proto.broker import QueueEntry
from .proto.framing import Topic
from .proto import payloads
from .proto.payloads import (CLOCK_REQUEST, CLOCK_RESPONSE, ClockPing,
                             ImageFrame, pack_clock, pack_control,
                             pack_grip_state, pack_markers, pack_pose,
                             pack_wrench, unpack_clock, unpack_control,
                             unpack_grip_cmd, unpack_grip_state,
                             unpack_haptic, unpack_teleop_cmd)
from .runtime import NodeConfig, NodeContext

DEFAULT_POSE_HZ = 60.0
DEFAULT_IMAGE_HZ = 10.0
DEFAULT_MARKERS_HZ = 30.0
DEFAULT_GRIP_HZ = 100.0
IMAGE_W, IMAGE_H = 64, 48


# ---------------------------------------------------------------------------
# scripts

@dataclass(frozen=True)
class TrajectoryScript:
    """Time-indexed waypoints; pose is slerp/lerp blended between them."""

    waypoints: tuple[tuple[float, Pose6D, float], ...]  # (t_s, pose, grip m)

    def __post_init__(self):
        wp = tuple(self.waypoints)
        if not wp:
            raise ConfigError("script needs at least one waypoint")
        times = [t for t, _, _ in wp]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("waypoint times must be strictly increasing")
        if any(g < 0.0 for _, _, g in wp):
            raise ConfigError("grip setpoints must be >= 0")
        object.__setattr__(self, "waypoints", wp)

    def sample(self, t_s: float) -> tuple[Pose6D, float]:
        wp = self.waypoints
        if t_s <= wp[0][0]:
            return wp[0][1], wp[0][2]
        if t_s >= wp[-1][0]:
            return wp[-1][1], wp[-1][2]
        for (ta, pa, ga), (tb, pb, gb) in zip(wp, wp[1:]):
            if ta <= t_s <= tb:
                u = (t_s - ta) / (tb - ta)
                return pose_interpolate(pa, pb, u), ga + u * (gb - ga)
        raise RangeError(f"time {t_s} not bracketed")  # unreachable

    @property
    def duration_s(self) -> float:
        return self.waypoints[-1][0]


ContactScript = Callable[[float], Wrench6D]


def constant_contact(w: Wrench6D) -> ContactScript:
    return lambda t: w


def zero_contact() -> ContactScript:
    z = Wrench6D.zero()
    return lambda t: z


# ---------------------------------------------------------------------------
# procedural frames

_pattern_cache: dict[tuple, bytes] = {}


def _checker_pattern(phase: int, w: int, h: int) -> bytes:
    key = ("rgb", phase, w, h)
    if key not in _pattern_cache:
        data = bytearray(w * h * 3)
        for y in range(h):
            base = y * w * 3
            for x in range(w):
                v = 255 if ((x // 8) + (y // 8) + phase) % 2 else 0
                i = base + x * 3
                data[i] = v
                data[i + 1] = v
                data[i + 2] = 255 - v
        _pattern_cache[key] = bytes(data)
    return _pattern_cache[key]


def _gradient_pattern(w: int, h: int) -> bytes:
    key = ("depth", w, h)
    if key not in _pattern_cache:
        data = bytearray(w * h * 2)
        for y in range(h):
            data[y * w * 2:(y + 1) * w * 2] = struct.pack("<H", 1000 + 10 * y) * w
        _pattern_cache[key] = bytes(data)
    return _pattern_cache[key]


def checker_rgb(seq: int, phase: int = 0, w: int = IMAGE_W, h: int = IMAGE_H) -> ImageFrame:
    """8px checkerboard with the seq number embedded in the first 4 bytes."""
    data = bytearray(_checker_pattern(phase % 2, w, h))
    data[0:4] = struct.pack("<I", seq)
    return ImageFrame(width=w, height=h, channels=3, seq=seq, data=bytes(data))


def gradient_depth(seq: int, w: int = IMAGE_W, h: int = IMAGE_H) -> ImageFrame:
    """Row gradient of u16 millimeters; seq in the first two pixels."""
    data = bytearray(_gradient_pattern(w, h))
    data[0:4] = struct.pack("<I", seq)
    return ImageFrame(width=w, height=h, channels=2, seq=seq, data=bytes(data))


def embedded_seq(frame: ImageFrame) -> int:
    return struct.unpack_from("<I", frame.data)[0]


# ---------------------------------------------------------------------------
# base logic

class NodeLogic:
    """Base behavior shared by every device: answer CLOCK requests and
    track a node-local notion of script time from the first tick."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self._t0_ns: int | None = None

    @property
    def node_id(self) -> str:
        return self.config.node_id

    def subscriptions(self) -> tuple[int, ...]:
        return (Topic.CLOCK,)

    def on_start(self, ctx: NodeContext) -> None:  # pragma: no cover
        raise NotImplementedError

    def on_message(self, ctx: NodeContext, entry: QueueEntry) -> None:
        if entry.message.topic == Topic.CLOCK:
            self._answer_clock(ctx, entry)

    def local_time_s(self, ctx: NodeContext) -> float:
        now = ctx.now_ns()
        if self._t0_ns is None:
            self._t0_ns = now
        return (now - self._t0_ns) / NS_PER_SEC

    def _answer_clock(self, ctx: NodeContext, entry: QueueEntry) -> None:
        try:
            ping = unpack_clock(entry.message.payload)
        except ClawError:
            ctx.faults += 1
            return
        if ping.kind != CLOCK_REQUEST or ping.node_id != self.node_id:
            return
        ctx.publish(Topic.CLOCK, pack_clock(ClockPing(
            kind=CLOCK_RESPONSE, node_id=self.node_id, reply_to=ping.reply_to,
            t0=ping.t0, t1=entry.arrival_ns, t2=ctx.now_ns())))


class SyncClient:
    """Periodic NTP-style requester embedded in reference-domain consumers
    (recorder, teleop coordinator)."""

    def __init__(self, owner_id: str, peers: list[str], period_s: float = 1.0):
        from .proto.clocksync import ClockRegistry, ClockSample
        self.owner_id = owner_id
        self.peers = list(peers)
        self.period_ns = int(round(period_s * NS_PER_SEC))
        self.registry = ClockRegistry()
        self._sample_cls = ClockSample

    def start(self, ctx: NodeContext, phase_ns: int = 0) -> None:
        ctx.every(self.period_ns, self._tick, phase_ns=phase_ns)

    def _tick(self, ctx: NodeContext) -> None:
        for peer in self.peers:
            ctx.publish(Topic.CLOCK, pack_clock(ClockPing(
                kind=CLOCK_REQUEST, node_id=peer, reply_to=self.owner_id,
                t0=ctx.now_ns())))

    def handle(self, ctx: NodeContext, entry: QueueEntry) -> bool:
        """Consume CLOCK responses addressed to this requester."""
        if entry.message.topic != Topic.CLOCK:
            return False
        try:
            ping = unpack_clock(entry.message.payload)
        except ClawError:
            ctx.faults += 1
            return True
        if ping.kind != CLOCK_RESPONSE or ping.reply_to != self.owner_id:
            return False
        try:
            self.registry.update(ping.node_id, self._sample_cls(
                t0=ping.t0, t1=ping.t1, t2=ping.t2, t3=entry.arrival_ns))
        except ClawError:
            ctx.faults += 1
        return True

    def offset_for(self, node_id: str) -> int:
        return self.registry.offset_for(node_id)


# ---------------------------------------------------------------------------
# phone node

class PhoneNode(NodeLogic):
    """Publishes POSE plus procedural RGB/DEPTH frames.

    Drive modes: a trajectory script (hand-held demo) or TELEOP_CMD targets
    (robot-mounted).  Targets are applied at the next pose tick, so the
    published stream stays on the node's own tick grid.
    """

    def __init__(self, config: NodeConfig, script: TrajectoryScript | None = None,
                 follow: bool = False, start_pose: Pose6D | None = None,
                 publish_images: bool = True):
        super().__init__(config)
        if script is None and not follow:
            raise ConfigError("phone node needs a script or follow mode")
        self.script = script
        self.follow = follow
        self.pose = start_pose if start_pose is not None else Pose6D.identity()
        self.publish_images = publish_images
        self._pending_target: Pose6D | None = None
        self._rgb_seq = 0
        self._depth_seq = 0
        self.pose_count = 0

    def subscriptions(self):
        subs = [Topic.CLOCK, Topic.CONTROL]
        if self.follow:
            subs.append(Topic.TELEOP_CMD)
        return tuple(subs)

    def on_start(self, ctx: NodeContext) -> None:
        ctx.every(self.config.period_ns("pose", DEFAULT_POSE_HZ), self._tick_pose)
        if self.publish_images:
            ctx.every(self.config.period_ns("rgb", DEFAULT_IMAGE_HZ), self._tick_rgb)
            ctx.every(self.config.period_ns("depth", DEFAULT_IMAGE_HZ), self._tick_depth)

    def on_message(self, ctx, entry):
        super().on_message(ctx, entry)
        if self.follow and entry.message.topic == Topic.TELEOP_CMD:
            try:
                cmd = unpack_teleop_cmd(entry.message.payload)
            except ClawError:
                ctx.faults += 1
                return
            self._pending_target = cmd.target

    def _tick_pose(self, ctx: NodeContext) -> None:
        t = self.local_time_s(ctx)
        if self.follow:
            if self._pending_target is not None:
                self.pose = self._pending_target
                self._pending_target = None
        else:
            self.pose, _ = self.script.sample(t)
        ctx.publish(Topic.POSE, pack_pose(self.pose))
        self.pose_count += 1

    def _tick_rgb(self, ctx: NodeContext) -> None:
        frame = checker_rgb(self._rgb_seq, phase=self._rgb_seq % 2)
        self._rgb_seq += 1
        ctx.publish(Topic.RGB, payloads.pack_image(frame))

    def _tick_depth(self, ctx: NodeContext) -> None:
        frame = gradient_depth(self._depth_seq)
        self._depth_seq += 1
        ctx.publish(Topic.DEPTH, payloads.pack_image(frame))


# ---------------------------------------------------------------------------
# motor node

@dataclass(frozen=True)
class MotorModel:
    """Grip axis dynamics: rate-limited slew, contact spring, back-drive."""

    v_max: float = 0.1                  # m/s
    contact_stiffness: float = 500.0    # N/m
    force_cap: float = 20.0             # N
    backdrive_threshold: float = 5.0    # N
    dt_s: float = 0.01                  # control period
    obstacle_width: float | None = None
    fourbar: FourBarParams = field(default_factory=FourBarParams)

    def __post_init__(self):
        if min(self.v_max, self.contact_stiffness, self.force_cap,
               self.backdrive_threshold, self.dt_s) <= 0:
            raise ConfigError("motor parameters must be positive")
        if self.dt_s > 0.010 + 1e-12:
            raise ConfigError("control period must be <= 10 ms")


def motor_step(m: MotorModel, s: GripState, setpoint: float,
               external_force: float, dt: float) -> GripState:
    """One control tick; pure function of the previous state.

    Width slews toward the setpoint at <= v_max*dt.  An obstacle stops
    closure at its width and loads the contact spring against the setpoint
    deficit; an external force above the back-drive threshold overrides the
    controller and moves the jaw away from its setpoint.
    """
    if dt <= 0:
        raise RangeError("dt must be > 0")
    fb = m.fourbar
    w_lo, w_hi = fb.w_min, fb.w_max
    setpoint = min(max(setpoint, w_lo), w_hi)
    step = m.v_max * dt
    width = s.width

    if external_force > m.backdrive_threshold:
        direction = 1.0 if width >= setpoint else -1.0
        width = min(max(width + direction * step, w_lo), w_hi)
        return GripState(width=width, setpoint=setpoint,
                         motor_angle=fourbar_theta(width, fb),
                         grip_force=min(m.force_cap, external_force),
                         stalled=False)

    delta = setpoint - width
    width = width + min(max(delta, -step), step)

    stalled = False
    grip_force = 0.0
    # obstacle blocks closure crossing it from above; the contact spring
    # loads against the remaining setpoint deficit
    if (m.obstacle_width is not None and s.width >= m.obstacle_width
            and setpoint < m.obstacle_width and width <= m.obstacle_width):
        width = m.obstacle_width
        stalled = True
        grip_force = min(m.force_cap,
                         m.contact_stiffness * (m.obstacle_width - setpoint))
    width = min(max(width, w_lo), w_hi)
    return GripState(width=width, setpoint=setpoint,
                     motor_angle=fourbar_theta(width, fb),
                     grip_force=grip_force, stalled=stalled)


class MotorNode(NodeLogic):
    """Fixed-period grip control loop: consumes GRIP_CMD / CONTROL /
    HAPTIC_FB, publishes GRIP_STATE every tick (even while stopped)."""

    def __init__(self, config: NodeConfig, model: MotorModel,
                 start_width: float | None = None,
                 external_force: Callable[[float], float] | None = None,
                 command_sources: tuple[str, ...] | None = None):
        super().__init__(config)
        self.model = model
        width = model.fourbar.w_max if start_width is None else start_width
        self.state = GripState(width=width, setpoint=width,
                               motor_angle=fourbar_theta(width, model.fourbar),
                               grip_force=0.0, stalled=False)
        self.setpoint = width
        self.running = True
        self.external_force = external_force
        # None accepts GRIP_CMD from anyone; otherwise only these publishers
        # (models the point-to-point motor bus in a multi-claw network)
        self.command_sources = command_sources
        self.felt: list[payloads.HapticFeedback] = []
        self.cmd_errors = 0
        self._ticks = 0
        self._state_dirty = False

    def subscriptions(self):
        return (Topic.CLOCK, Topic.GRIP_CMD, Topic.CONTROL, Topic.HAPTIC_FB)

    def on_start(self, ctx: NodeContext) -> None:
        ctx.every(int(round(self.model.dt_s * NS_PER_SEC)), self._tick)

    def on_message(self, ctx, entry):
        super().on_message(ctx, entry)
        topic = entry.message.topic
        if topic == Topic.GRIP_CMD:
            if (self.command_sources is not None
                    and entry.publisher not in self.command_sources):
                return
            try:
                self.setpoint = unpack_grip_cmd(entry.message.payload)
            except ClawError:
                self.cmd_errors += 1
        elif topic == Topic.CONTROL:
            try:
                fields = unpack_control(entry.message.payload)
            except ClawError:
                self.cmd_errors += 1
                return
            if fields.get("node") in (None, "", "all", self.node_id):
                verb = fields.get("verb")
                if verb == "start" and not self.running:
                    self.running = True
                    self._state_dirty = True
                elif verb == "stop" and self.running:
                    self.running = False
                    self._state_dirty = True
        elif topic == Topic.HAPTIC_FB:
            try:
                fb = unpack_haptic(entry.message.payload)
            except ClawError:
                self.cmd_errors += 1
                return
            self.felt.append(fb)
            if len(self.felt) > 1000:
                del self.felt[:500]

    @property
    def felt_force(self) -> float:
        """Magnitude of the most recent haptic feedback, the 'rendered'
        force on the hand-held side (actuation itself is out of scope)."""
        if not self.felt:
            return 0.0
        import numpy as np
        fb = self.felt[-1]
        return float(max(np.linalg.norm(fb.wrench_l.force),
                         np.linalg.norm(fb.wrench_r.force)))

    def _tick(self, ctx: NodeContext) -> None:
        t = self.local_time_s(ctx)
        if self.running:
            ext = self.external_force(t) if self.external_force else 0.0
            self.state = motor_step(self.model, self.state, self.setpoint,
                                    ext, self.model.dt_s)
        ctx.publish(Topic.GRIP_STATE, pack_grip_state(self.state))
        # actuation-state echo: on change and as a 1 Hz heartbeat, so
        # late-joining observers (the dashboard) see the truth
        heartbeat = self._ticks % max(1, int(round(1.0 / self.model.dt_s))) == 0
        if self._state_dirty or heartbeat:
            self._state_dirty = False
            ctx.publish(Topic.CONTROL, control_message(
                "motor:state", node=self.node_id,
                running="1" if self.running else "0"))
        self._ticks += 1


# ---------------------------------------------------------------------------
# fingertip node

class FingertipNode(NodeLogic):
    """Per tick: contact script -> lattice render -> publish markers, then
    run the calibrated estimator locally and publish the wrench (mirroring
    on-device inference)."""

    def __init__(self, config: NodeConfig, side: str, lattice: LatticeModel,
                 camera: CameraModel, estimator, contact: ContactScript | None = None,
                 couple_grip: bool = False, noise_sigma: float = 0.0,
                 seed: int = 0, grip_source: str | None = None):
        super().__init__(config)
        if side not in ("l", "r"):
            raise ConfigError("side must be 'l' or 'r'")
        self.side = side
        self.lattice = lattice
        self.camera = camera
        self.estimator = estimator
        self.contact = contact or zero_contact()
        self.couple_grip = couple_grip
        self.noise_sigma = noise_sigma
        self.seed = seed
        # only couple to this motor's GRIP_STATE (None = any publisher)
        self.grip_source = grip_source
        self.grip_force = 0.0
        self.skipped_ticks = 0
        self._tick_index = 0
        # per-tick solves are too slow for real-time rates; the lattice is
        # linear so the response matrix is precomputed once
        from .fingertip import LatticeResponse
        self._response = LatticeResponse(lattice, camera)

    @property
    def markers_topic(self) -> int:
        return Topic.MARKERS_L if self.side == "l" else Topic.MARKERS_R

    @property
    def wrench_topic(self) -> int:
        return Topic.WRENCH_L if self.side == "l" else Topic.WRENCH_R

    def subscriptions(self):
        return (Topic.CLOCK, Topic.GRIP_STATE)

    def on_start(self, ctx: NodeContext) -> None:
        ctx.every(self.config.period_ns("markers", DEFAULT_MARKERS_HZ), self._tick)

    def on_message(self, ctx, entry):
        super().on_message(ctx, entry)
        if entry.message.topic == Topic.GRIP_STATE:
            if self.grip_source is not None and entry.publisher != self.grip_source:
                return
            try:
                self.grip_force = unpack_grip_state(entry.message.payload).grip_force
            except ClawError:
                ctx.faults += 1

    def applied_wrench(self, t_s: float) -> Wrench6D:
        w = self.contact(t_s)
        if self.couple_grip:
            w = Wrench6D.from_vector(w.as_vector() * self.grip_force)
        return w

    def _tick(self, ctx: NodeContext) -> None:
        from .wrench import estimate
        t = self.local_time_s(ctx)
        idx = self._tick_index
        self._tick_index += 1
        w = self.applied_wrench(t)
        try:
            markers = self._response.observe(
                w, self.noise_sigma, seed=self.seed + idx,
                timestamp=ctx.now_ns())
        except (ProjectionError, RangeError):
            self.skipped_ticks += 1
            return
        ctx.publish(self.markers_topic,
                    pack_markers(markers.timestamp, markers.pixels))
        est = estimate(self.estimator, markers)
        ctx.publish(self.wrench_topic, pack_wrench(est))


def control_message(verb: str, **fields: str) -> bytes:
    out = {"verb": verb}
    out.update({k: str(v) for k, v in fields.items()})
    return pack_control(out)


class CollectorNode(NodeLogic):
    """Passive sink that keeps every received entry, for tests and the
    diagnostic CLI commands."""

    def __init__(self, config: NodeConfig, topics, tick_hz: float = 100.0):
        super().__init__(config)
        self.topics = tuple(int(t) for t in topics)
        self.tick_hz = tick_hz
        self.entries: list[QueueEntry] = []

    def subscriptions(self):
        return tuple(set(self.topics) | {int(Topic.CLOCK)})

    def on_start(self, ctx: NodeContext) -> None:
        ctx.every(int(round(NS_PER_SEC / self.tick_hz)), lambda ctx: None)

    def on_message(self, ctx, entry):
        super().on_message(ctx, entry)
        if entry.message.topic in self.topics:
            self.entries.append(entry)

    def by_topic(self, topic: int) -> list[QueueEntry]:
        return [e for e in self.entries if e.message.topic == int(topic)]


class ConductorNode(NodeLogic):
    """Publishes a scripted sequence of messages at absolute times; drives
    scenario control flow (record begin/end, start/stop, fault injection)."""

    def __init__(self, config: NodeConfig, events: list[tuple[int, int, bytes]]):
        super().__init__(config)
        self.events = list(events)  # (at_ns, topic, payload)

    def subscriptions(self):
        return (Topic.CLOCK,)

    def on_start(self, ctx: NodeContext) -> None:
        for at_ns, topic, payload in self.events:
            ctx.at(at_ns, lambda ctx, t=topic, p=payload: ctx.publish(t, p))
