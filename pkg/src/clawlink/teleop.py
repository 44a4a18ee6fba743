"""Leader-follower mirroring with haptic feedback and latency accounting.

The coordinator consumes the leader's pose/grip streams and the follower's
wrench streams (publisher identity disambiguates shared topics), issues
bounded-step pursuit commands to the follower, routes wrenches back to the
leader motor as HAPTIC_FB, and keeps one-way latency samples computed from
origin timestamps rebased through its own clock registry.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .core import (NS_PER_SEC, GripState, Pose6D, pose_compose, pose_delta,
                   quat_angle, quat_slerp)
from .errors import ClawError, ConfigError, InsufficientDataError, RangeError
from .proto.framing import Topic
from .proto import payloads
from .proto.payloads import HapticFeedback, TeleopCmd
from .runtime import NodeConfig, NodeContext
from .nodes import NodeLogic, SyncClient


@dataclass
class TeleopSession:
    """Lifecycle and latency bookkeeping for one leader-follower pairing.

    State may only move forward: idle -> active -> stopped."""

    leader_id: str
    follower_id: str
    state: str = "idle"
    started_at: int = 0
    latency_samples_ns: list[int] = field(default_factory=list)

    def activate(self, now_ns: int) -> None:
        if self.state != "idle":
            raise ConfigError(f"cannot activate from state {self.state!r}")
        self.state = "active"
        self.started_at = now_ns

    def stop(self) -> None:
        if self.state != "active":
            raise ConfigError(f"cannot stop from state {self.state!r}")
        self.state = "stopped"

    def add_latency(self, sample_ns: int) -> None:
        if self.state == "active":
            self.latency_samples_ns.append(sample_ns)


@dataclass(frozen=True)
class FollowerController:
    """Safety clamp on per-tick follower motion."""

    max_translation_step: float = 0.002   # m per tick
    max_rotation_step: float = 0.010      # rad per tick
    grip_passthrough: bool = True
    tick_period_s: float = 0.01

    def __post_init__(self):
        if self.max_translation_step <= 0 or self.max_rotation_step <= 0:
            raise ConfigError("controller steps must be > 0")
        if self.tick_period_s <= 0:
            raise ConfigError("tick period must be > 0")


def mirror_step(leader_pose: Pose6D, leader_width: float,
                follower_pose: Pose6D, c: FollowerController
                ) -> tuple[Pose6D, float | None]:
    """One pursuit step: translation clamped to the max step, rotation
    clamped via the geodesic interpolation fraction."""
    if not (np.all(np.isfinite(leader_pose.position))
            and np.all(np.isfinite(leader_pose.orientation))):
        raise RangeError("non-finite leader pose")
    dp = leader_pose.position - follower_pose.position
    dist = float(np.linalg.norm(dp))
    if dist > c.max_translation_step:
        pos = follower_pose.position + dp * (c.max_translation_step / dist)
    else:
        pos = leader_pose.position
    angle = quat_angle(follower_pose.orientation, leader_pose.orientation)
    if angle > c.max_rotation_step:
        q = quat_slerp(follower_pose.orientation, leader_pose.orientation,
                       c.max_rotation_step / angle)
    else:
        q = leader_pose.orientation
    grip = leader_width if c.grip_passthrough else None
    return Pose6D(pos, q), grip


def latency_report(session: TeleopSession) -> dict:
    """mean / p95 (nearest-rank) / max one-way latency plus jitter std."""
    samples = session.latency_samples_ns
    if len(samples) < 20:
        raise InsufficientDataError(
            f"need >= 20 latency samples, have {len(samples)}")
    ordered = sorted(samples)
    rank = math.ceil(0.95 * len(ordered))  # nearest-rank percentile
    return {
        "count": len(ordered),
        "mean_ns": statistics.fmean(ordered),
        "p95_ns": ordered[rank - 1],
        "max_ns": ordered[-1],
        "jitter_std_ns": statistics.pstdev(ordered),
    }


@dataclass
class TeleopPeers:
    """Node ids on each side of the loop (publisher identity filters the
    shared topics)."""

    leader_phone: str = "leader_phone"
    leader_motor: str = "leader_motor"
    follower_phone: str = "follower_phone"
    follower_motor: str = "follower_motor"
    follower_tip_l: str = "follower_tip_l"
    follower_tip_r: str = "follower_tip_r"

    def all_ids(self) -> list[str]:
        return [self.leader_phone, self.leader_motor, self.follower_phone,
                self.follower_motor, self.follower_tip_l, self.follower_tip_r]


class TeleopCoordinator(NodeLogic):
    """Session owner: one tick loop reads latest-wins leader state and
    follower wrenches, emits clamped follower commands and haptic frames."""

    STALE_TICKS = 5

    def __init__(self, config: NodeConfig, peers: TeleopPeers,
                 controller: FollowerController,
                 follower_start: Pose6D | None = None,
                 relative_mode: bool = True, sync_period_s: float = 1.0):
        super().__init__(config)
        self.peers = peers
        self.controller = controller
        self.relative_mode = relative_mode
        self.session = TeleopSession(leader_id=peers.leader_phone,
                                     follower_id=peers.follower_phone)
        self.sync = SyncClient(config.node_id, peers.all_ids(),
                               period_s=sync_period_s)
        self.leader_pose: Pose6D | None = None
        self.leader_width: float | None = None
        self.follower_pose = follower_start or Pose6D.identity()
        self.follower_grip: GripState | None = None
        self._engage_leader: Pose6D | None = None
        self._engage_follower: Pose6D | None = None
        self._wrench: dict[str, tuple] = {}  # side -> (Wrench6D, origin_ts, tick)
        self._tick_count = 0
        self.fault_count = 0
        self.haptic_sent = 0

    def subscriptions(self):
        return (Topic.CLOCK, Topic.POSE, Topic.GRIP_STATE, Topic.WRENCH_L,
                Topic.WRENCH_R, Topic.CONTROL)

    def on_start(self, ctx: NodeContext) -> None:
        self.sync.start(ctx)
        ctx.every(int(round(self.controller.tick_period_s * NS_PER_SEC)),
                  self._tick)

    def activate(self, ctx_now_ns: int) -> None:
        self.session.activate(ctx_now_ns)

    # -- inbound ------------------------------------------------------------

    def on_message(self, ctx, entry):
        topic = entry.message.topic
        if topic == Topic.CLOCK:
            if not self.sync.handle(ctx, entry):
                super().on_message(ctx, entry)
            return
        if topic == Topic.CONTROL:
            self._handle_control(ctx, entry)
            return
        if topic == Topic.POSE and entry.publisher == self.peers.leader_phone:
            self._on_leader_pose(ctx, entry)
        elif topic == Topic.POSE and entry.publisher == self.peers.follower_phone:
            try:
                self.follower_pose = payloads.unpack_pose(entry.message.payload)
            except ClawError:
                self.fault_count += 1
        elif topic == Topic.GRIP_STATE:
            self._on_grip(ctx, entry)
        elif topic in (Topic.WRENCH_L, Topic.WRENCH_R):
            self._on_wrench(ctx, entry)

    def _handle_control(self, ctx, entry):
        try:
            fields = payloads.unpack_control(entry.message.payload)
        except ClawError:
            self.fault_count += 1
            return
        verb = fields.get("verb")
        if verb == "teleop:start" and self.session.state == "idle":
            self.session.activate(ctx.now_ns())
            self._publish_state(ctx)
        elif verb == "teleop:stop" and self.session.state == "active":
            self.session.stop()
            self._publish_state(ctx)

    def _publish_state(self, ctx) -> None:
        from .nodes import control_message
        ctx.publish(Topic.CONTROL, control_message(
            "teleop:state",
            active="1" if self.session.state == "active" else "0",
            state=self.session.state))

    def _on_leader_pose(self, ctx, entry):
        try:
            pose = payloads.unpack_pose(entry.message.payload)
        except ClawError:
            self.fault_count += 1
            return
        self.leader_pose = pose
        offset = self.sync.offset_for(self.peers.leader_phone)
        origin_ref = entry.message.timestamp - offset
        self.session.add_latency(entry.arrival_ns - origin_ref)

    def _on_grip(self, ctx, entry):
        try:
            state = payloads.unpack_grip_state(entry.message.payload)
        except ClawError:
            self.fault_count += 1
            return
        if entry.publisher == self.peers.leader_motor:
            self.leader_width = state.width
        elif entry.publisher == self.peers.follower_motor:
            self.follower_grip = state

    def _on_wrench(self, ctx, entry):
        side = "l" if entry.message.topic == Topic.WRENCH_L else "r"
        if entry.publisher not in (self.peers.follower_tip_l,
                                   self.peers.follower_tip_r):
            return
        try:
            w = payloads.unpack_wrench(entry.message.payload)
        except ClawError:
            self.fault_count += 1
            return
        self._wrench[side] = (w, entry.message.timestamp, self._tick_count)

    # -- control loop ---------------------------------------------------------

    def _effective_leader_pose(self) -> Pose6D | None:
        """Pursuit target.  Relative mode re-expresses the leader's motion
        since engage in the leader's engage body frame and applies it from
        the follower's engage pose: "move 20 cm along my grip axis" means
        the same thing on both sides regardless of absolute frames."""
        if self.leader_pose is None:
            return None
        if not self.relative_mode:
            return self.leader_pose
        if self._engage_leader is None:
            self._engage_leader = self.leader_pose
            self._engage_follower = self.follower_pose
        return pose_compose(self._engage_follower,
                            pose_delta(self._engage_leader, self.leader_pose))

    def _tick(self, ctx: NodeContext) -> None:
        self._tick_count += 1
        if self._tick_count % max(1, int(round(1.0 / self.controller.tick_period_s))) == 1:
            self._publish_state(ctx)  # 1 Hz state heartbeat
        if self.session.state != "active":
            return
        target_pose = self._effective_leader_pose()
        if target_pose is not None:
            try:
                target, grip = mirror_step(
                    target_pose,
                    self.leader_width if self.leader_width is not None else 0.0,
                    self.follower_pose, self.controller)
            except RangeError:
                self.fault_count += 1
                return
            has_grip = (self.controller.grip_passthrough
                        and self.leader_width is not None)
            ctx.publish(Topic.TELEOP_CMD, payloads.pack_teleop_cmd(TeleopCmd(
                target=target, grip_setpoint=grip if has_grip else 0.0,
                has_grip=has_grip)))
            if has_grip:
                ctx.publish(Topic.GRIP_CMD, payloads.pack_grip_cmd(grip))
            # follower applies commands verbatim; track it locally so the
            # clamp acts on commanded state even between pose echoes
            self.follower_pose = target
        self._route_haptics(ctx)

    def _route_haptics(self, ctx: NodeContext) -> None:
        if "l" not in self._wrench and "r" not in self._wrench:
            return
        from .core import Wrench6D
        zero = Wrench6D.zero()
        wl, tl, kl = self._wrench.get("l", (zero, 0, self._tick_count))
        wr, tr, kr = self._wrench.get("r", (zero, 0, self._tick_count))
        stale = (self._tick_count - min(kl, kr)) > self.STALE_TICKS
        ctx.publish(Topic.HAPTIC_FB, payloads.pack_haptic(HapticFeedback(
            wrench_l=wl, wrench_r=wr, origin_ts_l=tl, origin_ts_r=tr,
            stale=stale)))
        self.haptic_sent += 1

    def stats_text(self) -> str:
        """Session stats as the documented key=value dump."""
        lines = [f"leader={self.session.leader_id}",
                 f"follower={self.session.follower_id}",
                 f"state={self.session.state}",
                 f"haptic_sent={self.haptic_sent}",
                 f"faults={self.fault_count}"]
        try:
            rep = latency_report(self.session)
            lines += [f"latency_mean_ms={rep['mean_ns'] / 1e6:.3f}",
                      f"latency_p95_ms={rep['p95_ns'] / 1e6:.3f}",
                      f"latency_max_ms={rep['max_ns'] / 1e6:.3f}",
                      f"latency_jitter_ms={rep['jitter_std_ns'] / 1e6:.3f}"]
        except InsufficientDataError:
            lines.append("latency=insufficient-samples")
        return "\n".join(lines)
