"""Standard desk-scale rigs wired for tests, the CLI and the scripts.

A "claw rig" is one device set (phone + motor + two fingertips + recorder)
attached to a virtual network, driven either by a demonstration plan, a
recorded episode, or a k-NN policy.  Construction order and every seed are
fixed so that demo, replay and policy runs produce byte-identical episode
files.

Pick plans use positions on a dyadic grid (multiples of 2^-12 m) with
identity orientation and power-of-two segment lengths: position deltas and
their re-application compose exactly in binary floating point, which makes
the replay/BC acceptance checks exact rather than approximate.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .core import NS_PER_SEC, FourBarParams, Pose6D, Wrench6D, pose_interpolate
from .fingertip import (CameraModel, LatticeModel, build_grid_lattice,
                        default_camera, default_lattice)
from .nodes import (ConductorNode, FingertipNode, MotorModel, MotorNode,
                    PhoneNode, constant_contact, control_message)
from .proto.framing import Topic
from .runtime import DelayModel, NodeConfig, VirtualNetwork
from .sync import (DEFAULT_EPS_NS, DemoDriver, Episode, EpisodeHeader,
                   PolicyDriver, RecorderNode, ReplayDriver)
from .wrench import (EstimatorModel, build_calibration_set, calibrate,
                     calibration_wrench_schedule)

GRID = 2.0 ** -12  # dyadic position quantum, meters


# ---------------------------------------------------------------------------
# sensing configurations

@functools.lru_cache(maxsize=4)
def desk_sensing(seed: int = 0) -> tuple[LatticeModel, CameraModel, EstimatorModel]:
    """Soft desk lattice (800 N/m) calibrated at its small-strain scale."""
    m, c = default_lattice(), default_camera()
    cs = build_calibration_set(m, c, calibration_wrench_schedule(200, seed=seed))
    return m, c, calibrate(cs, lam=0.0)


@functools.lru_cache(maxsize=4)
def stiff_sensing(seed: int = 0) -> tuple[LatticeModel, CameraModel, EstimatorModel]:
    """Production-cell lattice: stiff enough that newton-scale grasp loads
    stay deep inside the linear regime of the camera model."""
    m = build_grid_lattice(5, 5, 2, 0.005, 8e8,
                           force_bound=100.0, torque_bound=5.0)
    c = default_camera()
    sched = calibration_wrench_schedule(200, force_scale=2.5,
                                        torque_scale=0.025, seed=seed)
    cs = build_calibration_set(m, c, sched)
    return m, c, calibrate(cs, lam=0.0)


# ---------------------------------------------------------------------------
# claw rig

@dataclass(frozen=True)
class ClawRigParams:
    """Hardware-side configuration shared by demo and execution runs; the
    drive mode is deliberately not part of the digest."""

    frame_hz: float = 25.0
    motor_dt_s: float = 0.01
    obstacle_width: float = 3 * 2.0 ** -6      # 0.046875 m
    contact_stiffness: float = 500.0
    force_cap: float = 20.0
    backdrive_threshold: float = 5.0
    start_width: float = 3 * 2.0 ** -5         # 0.09375 m
    start_x: float = 0.0
    start_z: float = 2.0 ** -3                 # 0.125 m
    contact_factor: float = 0.25               # tip wrench per newton of grip
    sensing_seed: int = 0
    noise_sigma: float = 0.0
    tip_seed: int = 100
    image_divisor: int = 5                     # RGB/DEPTH every Nth frame

    @property
    def period_ns(self) -> int:
        return int(round(NS_PER_SEC / self.frame_hz))

    @property
    def start_pose(self) -> Pose6D:
        return Pose6D(np.array([self.start_x, 0.0, self.start_z]),
                      np.array([1.0, 0.0, 0.0, 0.0]))

    def digest(self) -> str:
        payload = {k: getattr(self, k) for k in (
            "frame_hz", "motor_dt_s", "obstacle_width", "contact_stiffness",
            "force_cap", "backdrive_threshold", "start_width", "start_x",
            "start_z", "contact_factor", "sensing_seed", "noise_sigma",
            "tip_seed", "image_divisor")}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def motor_model(self) -> MotorModel:
        return MotorModel(v_max=0.1,
                          contact_stiffness=self.contact_stiffness,
                          force_cap=self.force_cap,
                          backdrive_threshold=self.backdrive_threshold,
                          dt_s=self.motor_dt_s,
                          obstacle_width=self.obstacle_width,
                          fourbar=FourBarParams())

    def header(self) -> EpisodeHeader:
        return EpisodeHeader(
            config_digest=self.digest(),
            rates_hz={"pose": self.frame_hz, "grip": 1.0 / self.motor_dt_s,
                      "markers": self.frame_hz,
                      "images": self.frame_hz / self.image_divisor},
            seed=self.tip_seed,
            reference_topic=int(Topic.POSE),
            epsilon_ns=DEFAULT_EPS_NS)


@dataclass
class ClawRig:
    net: VirtualNetwork
    params: ClawRigParams
    phone: PhoneNode
    motor: MotorNode
    tip_l: FingertipNode
    tip_r: FingertipNode
    recorder: RecorderNode | None
    driver: object | None


TOPIC_NODES = {
    int(Topic.POSE): "phone",
    int(Topic.RGB): "phone",
    int(Topic.DEPTH): "phone",
    int(Topic.GRIP_STATE): "motor",
    int(Topic.WRENCH_L): "tip_l",
    int(Topic.WRENCH_R): "tip_r",
}


def build_claw_rig(net: VirtualNetwork, params: ClawRigParams,
                   driver=None, record_path=None,
                   record_window_s: tuple[float, float] | None = None,
                   phone_script=None) -> ClawRig:
    """Wire one claw to the network in the canonical node order.

    driver: DemoDriver/ReplayDriver/PolicyDriver instance, or None when the
    phone runs its own script.  record_window_s schedules record:begin/end
    CONTROL messages through a conductor.
    """
    p = params
    follow = phone_script is None
    phone = PhoneNode(
        NodeConfig(node_id="phone", rates_hz={
            "pose": p.frame_hz, "rgb": p.frame_hz / p.image_divisor,
            "depth": p.frame_hz / p.image_divisor}),
        script=phone_script, follow=follow, start_pose=p.start_pose)
    net.add_node(phone, phone.config)

    motor = MotorNode(NodeConfig(node_id="motor"), p.motor_model(),
                      start_width=p.start_width)
    net.add_node(motor, motor.config)

    lat, cam, est = stiff_sensing(p.sensing_seed)
    contact = constant_contact(Wrench6D(
        np.array([p.contact_factor, 0.0, 0.0]), np.zeros(3)))
    tips = []
    for side, seed in (("l", p.tip_seed), ("r", p.tip_seed + 1)):
        tip = FingertipNode(
            NodeConfig(node_id=f"tip_{side}", rates_hz={"markers": p.frame_hz}),
            side=side, lattice=lat, camera=cam, estimator=est,
            contact=contact, couple_grip=True, noise_sigma=p.noise_sigma,
            seed=seed)
        net.add_node(tip, tip.config)
        tips.append(tip)

    recorder = None
    if record_path is not None:
        header = p.header()
        if record_window_s is not None:
            header.meta["record_end_s"] = repr(record_window_s[1])
        recorder = RecorderNode(
            NodeConfig(node_id="recorder"), record_path, TOPIC_NODES,
            header=header, reference_topic=int(Topic.POSE), auto_start=True)
        net.add_node(recorder, recorder.config)

    if driver is not None:
        net.add_node(driver, driver.config)

    if record_window_s is not None and recorder is not None:
        end_ns = int(round(record_window_s[1] * NS_PER_SEC))
        conductor = ConductorNode(NodeConfig(node_id="conductor"), [
            (end_ns, int(Topic.CONTROL), control_message("record:end")),
        ])
        net.add_node(conductor, conductor.config)

    return ClawRig(net=net, params=p, phone=phone, motor=motor,
                   tip_l=tips[0], tip_r=tips[1], recorder=recorder,
                   driver=driver)


# ---------------------------------------------------------------------------
# pick-style demonstration plans

SEGMENT_FRAMES = 16  # power of two so interpolation fractions stay dyadic
DEMO_SPACING_X = 2.0 ** -4  # demos sit 62.5 mm apart laterally


def demo_params(demo_index: int, base: ClawRigParams | None = None) -> ClawRigParams:
    """Rig parameters for the i-th demonstration site: the claw starts on
    that demo's own plan origin so no two demos share a start state."""
    p = base or ClawRigParams()
    return ClawRigParams(**{**p.__dict__,
                            "start_x": p.start_x + demo_index * DEMO_SPACING_X})


def pick_plan(params: ClawRigParams):
    """Frame-indexed pick demonstration: approach, descend, grasp, lift,
    transport, release.  x advances every frame so no two observations in a
    demo coincide; the plan starts exactly at the rig's start pose."""
    x0 = params.start_x
    zh = params.start_z
    zl = zh - 2.0 ** -4                           # descend 62.5 mm
    open_w = params.start_width
    closed_w = 2.0 ** -5                          # 0.03125 m, stalls on obstacle
    dx = 2.0 ** -11 * SEGMENT_FRAMES              # per-segment advance

    k_pts = []
    x = x0
    z = zh
    grip = open_w
    k_pts.append((0, (x, z), grip))
    for dz, g in ((0.0, open_w),      # approach
                  (zl - zh, open_w),  # descend
                  (0.0, closed_w),    # grasp
                  (zh - zl, closed_w),  # lift
                  (0.0, closed_w),    # transport
                  (0.0, open_w)):     # release
        x += dx
        z += dz
        k_pts.append((k_pts[-1][0] + SEGMENT_FRAMES, (x, z), g))

    waypoints = [(k, Pose6D(np.array([xz[0], 0.0, xz[1]]),
                            np.array([1.0, 0.0, 0.0, 0.0])), g)
                 for k, xz, g in k_pts]
    n_frames = waypoints[-1][0]

    def plan(k: int):
        if k <= 0:
            return waypoints[0][1], waypoints[0][2]
        if k >= n_frames:
            return waypoints[-1][1], waypoints[-1][2]
        for (ka, pa, _), (kb, pb, gb) in zip(waypoints, waypoints[1:]):
            if ka <= k <= kb:
                u = (k - ka) / (kb - ka)  # dyadic: kb - ka is a power of two
                return pose_interpolate(pa, pb, u), gb
        raise AssertionError("unreachable")

    return plan, n_frames


def run_demo(demo_index: int, out_path, params: ClawRigParams | None = None,
             extra_s: float = 0.4) -> Episode:
    """One seeded virtual-time demonstration, recorded to out_path."""
    from .sync import load
    p = demo_params(demo_index, params)
    plan, n_frames = pick_plan(p)
    net = VirtualNetwork()
    driver = DemoDriver(NodeConfig(node_id="driver"), plan=plan,
                        period_ns=p.period_ns, n_steps=n_frames)
    end_s = n_frames / p.frame_hz + extra_s
    build_claw_rig(net, p, driver=driver, record_path=out_path,
                   record_window_s=(0.0, end_s))
    net.run_for(end_s + 0.2)
    return load(out_path)


def run_replay(episode: Episode, out_path,
               params: ClawRigParams | None = None) -> Episode:
    """Re-execute a recorded episode on an identical rig and record it over
    the exact same window, so the two files match byte for byte.  The rig's
    start state is reconstructed from the episode's first frame."""
    from .sync import load
    p = params or ClawRigParams()
    first = episode.frames[0]
    p = ClawRigParams(**{**p.__dict__,
                         "start_x": float(first.pose.position[0]),
                         "start_width": float(first.grip.setpoint)})
    net = VirtualNetwork()
    driver = ReplayDriver(NodeConfig(node_id="driver"), episode=episode,
                          period_ns=p.period_ns)
    end_s = float(episode.header.meta["record_end_s"])
    build_claw_rig(net, p, driver=driver, record_path=out_path,
                   record_window_s=(0.0, end_s))
    net.run_for(end_s + 0.2)
    return load(out_path)


def run_policy(policy, steps: int, out_path,
               params: ClawRigParams | None = None,
               start_x: float | None = None, end_s: float | None = None) -> Episode:
    """Closed-loop policy execution from a configurable start state."""
    from .sync import load
    p = params or ClawRigParams()
    if start_x is not None and start_x != p.start_x:
        p = ClawRigParams(**{**p.__dict__, "start_x": start_x})
    net = VirtualNetwork()
    driver = PolicyDriver(NodeConfig(node_id="driver"), policy=policy,
                          period_ns=p.period_ns, max_steps=steps)
    if end_s is None:
        end_s = steps / p.frame_hz + 0.4
    build_claw_rig(net, p, driver=driver, record_path=out_path,
                   record_window_s=(0.0, end_s))
    net.run_for(end_s + 0.2)
    return load(out_path)


# ---------------------------------------------------------------------------
# teleoperation loop

@dataclass
class TeleopScenario:
    net: VirtualNetwork
    coordinator: object
    leader_phone: PhoneNode
    leader_motor: MotorNode
    follower_phone: PhoneNode
    follower_motor: MotorNode
    follower_tips: list[FingertipNode]


def build_teleop_loop(leader_script, *, leader_delay_ms: float = 20.0,
                      leader_skew_ms: float = 7.0,
                      rate_hz: float = 100.0,
                      max_step_m: float = 0.002,
                      max_rot_rad: float = 0.010,
                      sync_period_s: float = 0.25,
                      follower_obstacle: float | None = None,
                      contact_factor: float = 0.25) -> TeleopScenario:
    """Leader claw streams through an injected one-way delay; a coordinator
    mirrors it onto a follower claw and routes wrenches back as haptics."""
    from .teleop import FollowerController, TeleopCoordinator, TeleopPeers

    net = VirtualNetwork()
    delay = DelayModel(fixed_ms=leader_delay_ms, jitter_ms=0.0, seed=1)
    skew_ns = int(round(leader_skew_ms * 1e6))

    leader_phone = PhoneNode(
        NodeConfig(node_id="leader_phone", rates_hz={"pose": rate_hz},
                   clock_skew_ns=skew_ns, delay=delay),
        script=leader_script, publish_images=False)
    net.add_node(leader_phone, leader_phone.config)

    leader_motor = MotorNode(
        NodeConfig(node_id="leader_motor", clock_skew_ns=skew_ns, delay=delay),
        MotorModel(), command_sources=("leader_trigger",))
    net.add_node(leader_motor, leader_motor.config)

    follower_phone = PhoneNode(
        NodeConfig(node_id="follower_phone", rates_hz={"pose": rate_hz}),
        follow=True, start_pose=leader_script.sample(0.0)[0],
        publish_images=False)
    net.add_node(follower_phone, follower_phone.config)

    follower_motor = MotorNode(
        NodeConfig(node_id="follower_motor"),
        MotorModel(obstacle_width=follower_obstacle)
        if follower_obstacle is not None else MotorModel(),
        command_sources=("teleop",))
    net.add_node(follower_motor, follower_motor.config)

    lat, cam, est = stiff_sensing(0)
    tips = []
    for side, seed in (("l", 500), ("r", 501)):
        tip = FingertipNode(
            NodeConfig(node_id=f"follower_tip_{side}",
                       rates_hz={"markers": 50.0}),
            side=side, lattice=lat, camera=cam, estimator=est,
            contact=constant_contact(Wrench6D(
                np.array([contact_factor, 0.0, 0.0]), np.zeros(3))),
            couple_grip=True, seed=seed, grip_source="follower_motor")
        net.add_node(tip, tip.config)
        tips.append(tip)

    controller = FollowerController(max_translation_step=max_step_m,
                                    max_rotation_step=max_rot_rad,
                                    tick_period_s=1.0 / rate_hz)
    coord = TeleopCoordinator(
        NodeConfig(node_id="teleop"), TeleopPeers(),
        controller, follower_start=leader_script.sample(0.0)[0],
        relative_mode=False, sync_period_s=sync_period_s)
    net.add_node(coord, coord.config)
    return TeleopScenario(net=net, coordinator=coord,
                          leader_phone=leader_phone, leader_motor=leader_motor,
                          follower_phone=follower_phone,
                          follower_motor=follower_motor, follower_tips=tips)
