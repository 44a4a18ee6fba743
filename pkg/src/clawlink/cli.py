"""claw: command-line front end.

Subcommands cover the system's external surfaces: broker and gateway
servers, wall-clock device nodes, lattice diagnostics, estimator
calibration, episode record/replay/diff, behavioral cloning and the teleop
coordinator.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import configio
from .core import NS_PER_SEC
from .errors import ClawError
from .fingertip import condition_number, is_grounded
from .proto.framing import Topic
from .proto.tcp import BrokerClient, BrokerServer
from .runtime import NodeConfig, WallClockRuntime


def _split_addr(addr: str, default_port: int) -> tuple[str, int]:
    host, _, port = addr.partition(":")
    return host or "127.0.0.1", int(port) if port else default_port


def _wait_for_interrupt(running_check=None, duration_s: float | None = None):
    deadline = None if duration_s is None else time.time() + duration_s
    try:
        while True:
            time.sleep(0.2)
            if deadline is not None and time.time() >= deadline:
                return
            if running_check is not None and not running_check():
                return
    except KeyboardInterrupt:
        return


# ---------------------------------------------------------------------------

def cmd_broker(args) -> int:
    host, port = _split_addr(args.listen, 7600)
    server = BrokerServer(host=host, port=port,
                          queue_capacity=args.queue_capacity)
    server.start()
    print(f"broker listening on {server.host}:{server.port} "
          f"(queue capacity {args.queue_capacity})")
    _wait_for_interrupt(duration_s=args.duration_s)
    server.stop()
    return 0


def cmd_gateway(args) -> int:
    from .proto.gateway import GatewayServer
    bhost, bport = _split_addr(args.broker, 7600)
    lhost, lport = _split_addr(args.listen, 7601)
    gw = GatewayServer(broker_host=bhost, broker_port=bport,
                       host=lhost, port=lport, static_dir=args.static)
    try:
        gw.start()
    except ClawError as e:
        print(f"gateway startup failed: {e}", file=sys.stderr)
        return 1
    print(f"gateway on {gw.host}:{gw.port} (broker {bhost}:{bport})")
    _wait_for_interrupt(duration_s=args.duration_s)
    gw.stop()
    return 0


def _run_node(logic, config: NodeConfig, duration_s: float | None) -> int:
    client = BrokerClient(config, topics=logic.subscriptions())
    try:
        client.connect()
    except ClawError as e:
        print(f"node startup failed: {e}", file=sys.stderr)
        return 1
    rt = WallClockRuntime()
    rt.add_node(logic, config, client)
    print(f"node {config.node_id} running against {config.broker_addr}")
    _wait_for_interrupt(running_check=lambda: not client.stopped,
                        duration_s=duration_s)
    rt.stop()
    client.close()
    return 0


def cmd_node(args) -> int:
    from .nodes import FingertipNode, MotorNode, PhoneNode
    from .wrench import load_model
    cfg_data = configio.load_config(args.config)
    config = configio.node_config(cfg_data, default_id=args.kind)

    if args.kind == "phone":
        script = (configio.script_from(cfg_data["script"])
                  if "script" in cfg_data else None)
        logic = PhoneNode(config, script=script,
                          follow=bool(cfg_data.get("follow", script is None)),
                          start_pose=configio.pose_from(
                              cfg_data.get("start", {})))
    elif args.kind == "motor":
        logic = MotorNode(config, configio.motor_from(cfg_data.get("motor")),
                          start_width=cfg_data.get("start_width"))
    elif args.kind == "fingertip":
        lattice = configio.lattice_from(cfg_data.get("lattice"))
        camera = configio.camera_from(cfg_data.get("camera"))
        if "estimator" in cfg_data:
            estimator = load_model(cfg_data["estimator"])
        else:
            from .scenarios import stiff_sensing
            _, _, estimator = stiff_sensing(int(cfg_data.get("seed", 0)))
        contact, couple = configio.contact_from(cfg_data.get("contact"))
        logic = FingertipNode(config, side=str(cfg_data.get("side", "l")),
                              lattice=lattice, camera=camera,
                              estimator=estimator, contact=contact,
                              couple_grip=couple,
                              noise_sigma=float(cfg_data.get("noise_sigma", 0.0)),
                              seed=int(cfg_data.get("seed", 0)),
                              grip_source=cfg_data.get("grip_source"))
    else:
        print(f"unknown node kind {args.kind}", file=sys.stderr)
        return 2
    return _run_node(logic, config, args.duration_s)


def cmd_lattice_dump(args) -> int:
    cfg = configio.load_config(args.config) if args.config else {}
    m = configio.lattice_from(cfg.get("lattice", cfg))
    grounded = is_grounded(m)
    print(f"nodes: {m.n_nodes}  edges: {len(m.edges)}")
    print(f"fixed: {len(m.fixed_nodes)}  contact: {len(m.contact_nodes)}  "
          f"markers: {len(m.marker_nodes)}")
    print(f"grounded: {grounded}")
    if grounded:
        print(f"condition number (free DOFs): {condition_number(m):.6e}")
    return 0


def cmd_calibrate(args) -> int:
    from .wrench import calibrate, load_calibration_set, save_model
    cs = load_calibration_set(getattr(args, "in"))
    model = calibrate(cs, lam=args.lam)
    save_model(model, args.out)
    print(f"calibrated on {len(cs.samples)} samples, lambda={args.lam}")
    print(f"condition number: {model.condition_number:.6e}")
    print(f"model written to {args.out}")
    return 0


def cmd_calib_gen(args) -> int:
    from .wrench import (build_calibration_set, calibration_wrench_schedule,
                         save_calibration_set)
    cfg = configio.load_config(args.config) if args.config else {}
    m = configio.lattice_from(cfg.get("lattice"))
    c = configio.camera_from(cfg.get("camera"))
    sched = calibration_wrench_schedule(args.samples,
                                        force_scale=args.force_scale,
                                        torque_scale=args.torque_scale,
                                        seed=args.seed)
    cs = build_calibration_set(m, c, sched, noise_sigma=args.sigma,
                               seed=args.seed)
    save_calibration_set(cs, args.out)
    print(f"wrote {len(cs.samples)} calibration samples to {args.out}")
    return 0


def cmd_record(args) -> int:
    from .proto.framing import Topic
    from .scenarios import TOPIC_NODES
    from .sync import EpisodeHeader, RecorderNode
    config = NodeConfig(node_id="recorder", broker_addr=args.broker)
    header = EpisodeHeader(epsilon_ns=int(args.eps_ms * 1e6))
    logic = RecorderNode(config, args.out, TOPIC_NODES, header=header,
                         eps_ns=int(args.eps_ms * 1e6),
                         reference_topic=int(Topic.POSE),
                         auto_start=args.immediate)
    client = BrokerClient(config, topics=logic.subscriptions())
    try:
        client.connect()
    except ClawError as e:
        print(f"recorder startup failed: {e}", file=sys.stderr)
        return 1
    rt = WallClockRuntime()
    ctx = rt.add_node(logic, config, client)
    print(f"recorder armed (eps {args.eps_ms} ms); waiting for record "
          f"control or --duration-s")
    _wait_for_interrupt(duration_s=args.duration_s)
    if logic.recording:
        logic._finalize(ctx)
    rt.stop()
    client.close()
    if logic.episodes_written:
        print(f"episode written to {args.out}")
        return 0
    print("no episode recorded")
    return 1


def cmd_replay(args) -> int:
    from .proto import payloads
    from .sync import load
    episode = load(args.file)
    if not episode.frames:
        print("episode is empty", file=sys.stderr)
        return 1
    config = NodeConfig(node_id="replayer", broker_addr=args.broker)
    client = BrokerClient(config, topics=[Topic.CONTROL])
    try:
        client.connect()
    except ClawError as e:
        print(f"replay startup failed: {e}", file=sys.stderr)
        return 1
    period = ((episode.frames[1].ts_ref - episode.frames[0].ts_ref)
              if len(episode.frames) > 1 else 40_000_000)
    print(f"replaying {len(episode.frames)} frames at "
          f"{NS_PER_SEC / period:.1f} Hz")
    start = time.time()
    try:
        for k, frame in enumerate(episode.frames[1:], start=1):
            wait = k * period / NS_PER_SEC - (time.time() - start)
            if wait > 0:
                time.sleep(wait)
            client.publish(Topic.TELEOP_CMD, payloads.pack_teleop_cmd(
                payloads.TeleopCmd(target=frame.pose,
                                   grip_setpoint=frame.grip.setpoint,
                                   has_grip=True)))
            client.publish(Topic.GRIP_CMD,
                           payloads.pack_grip_cmd(frame.grip.setpoint))
    except KeyboardInterrupt:
        pass
    finally:
        client.close()
    print("replay finished")
    return 0


def cmd_bc_train(args) -> int:
    from .sync import load, save_policy, train_bc
    episodes = [load(p) for p in args.episodes]
    policy = train_bc(episodes, k=args.k)
    save_policy(policy, args.out)
    print(f"trained k={args.k} policy on {len(policy.actions)} transitions "
          f"from {len(episodes)} episodes -> {args.out}")
    return 0


def cmd_bc_run(args) -> int:
    from .sync import PolicyDriver, load_policy
    policy = load_policy(args.policy)
    config = NodeConfig(node_id="bc-runner", broker_addr=args.broker)
    logic = PolicyDriver(config, policy=policy,
                         period_ns=int(NS_PER_SEC / args.rate_hz),
                         max_steps=args.steps)
    return _run_node(logic, config, args.duration_s)


def cmd_diff(args) -> int:
    from .sync import discrepancy_log, load
    report = discrepancy_log(load(args.demo), load(args.executed))
    print(json.dumps(report.summary(), indent=2))
    return 0


class DualBrokerEndpoint:
    """Teleop endpoint spanning the leader claw's broker and the follower
    claw's broker (the wire frame carries no origin, so claw identity rides
    the connection).  Commands route by topic: follower commands to the
    follower side, haptics to the leader side, clock/control to both."""

    FOLLOWER_TOPICS = frozenset({int(Topic.TELEOP_CMD), int(Topic.GRIP_CMD)})
    LEADER_TOPICS = frozenset({int(Topic.HAPTIC_FB)})

    def __init__(self, config, leader: BrokerClient, follower: BrokerClient):
        self.config = config
        self.leader = leader
        self.follower = follower

    @property
    def stopped(self) -> bool:
        return self.leader.stopped or self.follower.stopped

    def now_ns(self) -> int:
        return self.leader.now_ns()

    def publish(self, topic, payload):
        t = int(topic)
        if t in self.FOLLOWER_TOPICS:
            return self.follower.publish(topic, payload)
        if t in self.LEADER_TOPICS:
            return self.leader.publish(topic, payload)
        self.follower.publish(topic, payload)
        return self.leader.publish(topic, payload)

    def drain(self):
        entries = self.leader.drain() + self.follower.drain()
        entries.sort(key=lambda e: e.arrival_ns)
        return entries


def cmd_teleop(args) -> int:
    from .teleop import FollowerController, TeleopCoordinator, TeleopPeers
    config = NodeConfig(node_id="teleop", broker_addr=args.broker)
    controller = FollowerController(
        max_translation_step=args.max_step_mm * 1e-3,
        max_rotation_step=args.max_rot_mrad * 1e-3)
    # entry labels are the claw sides: one broker per claw
    peers = TeleopPeers(
        leader_phone="leader", leader_motor="leader",
        follower_phone="follower", follower_motor="follower",
        follower_tip_l="follower", follower_tip_r="follower")
    logic = TeleopCoordinator(config, peers, controller,
                              relative_mode=not args.absolute)
    topics = logic.subscriptions()
    lhost, lport = _split_addr(args.leader_broker or args.broker, 7600)
    fhost, fport = _split_addr(args.broker, 7600)
    leader = BrokerClient(config, topics=topics, host=lhost, port=lport,
                          publisher_label="leader")
    follower = BrokerClient(config, topics=topics, host=fhost, port=fport,
                            publisher_label="follower")
    try:
        leader.connect()
        follower.connect()
    except ClawError as e:
        print(f"teleop startup failed: {e}", file=sys.stderr)
        return 1
    endpoint = DualBrokerEndpoint(config, leader, follower)
    rt = WallClockRuntime()
    rt.add_node(logic, config, endpoint)
    logic.session.activate(endpoint.now_ns())
    print(f"teleop active: {args.leader} -> {args.follower}")
    _wait_for_interrupt(duration_s=args.duration_s)
    if logic.session.state == "active":
        logic.session.stop()
    print(logic.stats_text())
    rt.stop()
    leader.close()
    follower.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="claw",
                                description="desk-scale claw middleware")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("broker", help="run the pub/sub broker")
    b.add_argument("--listen", default="127.0.0.1:7600")
    b.add_argument("--queue-capacity", type=int, default=256)
    b.add_argument("--duration-s", type=float, default=None)
    b.set_defaults(fn=cmd_broker)

    g = sub.add_parser("gateway", help="run the browser gateway")
    g.add_argument("--broker", default="127.0.0.1:7600")
    g.add_argument("--listen", default="127.0.0.1:7601")
    g.add_argument("--static", default=None,
                   help="directory with the dashboard bundle")
    g.add_argument("--duration-s", type=float, default=None)
    g.set_defaults(fn=cmd_gateway)

    n = sub.add_parser("node", help="run a simulated device node")
    n.add_argument("kind", choices=["phone", "motor", "fingertip"])
    n.add_argument("--config", required=True)
    n.add_argument("--duration-s", type=float, default=None)
    n.set_defaults(fn=cmd_node)

    ld = sub.add_parser("lattice-dump",
                        help="print lattice conditioning and grounding")
    ld.add_argument("--config", default=None)
    ld.set_defaults(fn=cmd_lattice_dump)

    c = sub.add_parser("calibrate", help="fit an estimator from a calibration file")
    c.add_argument("--in", dest="in", required=True)
    c.add_argument("--lambda", dest="lam", type=float, default=1e-6)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_calibrate)

    cg = sub.add_parser("calib-gen",
                        help="generate a calibration capture from the sim")
    cg.add_argument("--config", default=None)
    cg.add_argument("--samples", type=int, default=200)
    cg.add_argument("--force-scale", type=float, default=0.01)
    cg.add_argument("--torque-scale", type=float, default=1e-4)
    cg.add_argument("--sigma", type=float, default=0.0)
    cg.add_argument("--seed", type=int, default=0)
    cg.add_argument("--out", required=True)
    cg.set_defaults(fn=cmd_calib_gen)

    r = sub.add_parser("record", help="record an episode from the broker")
    r.add_argument("--out", required=True)
    r.add_argument("--eps-ms", type=float, default=25.0)
    r.add_argument("--broker", default="127.0.0.1:7600")
    r.add_argument("--duration-s", type=float, default=None)
    r.add_argument("--immediate", action="store_true",
                   help="start recording now instead of waiting for record:begin")
    r.set_defaults(fn=cmd_record)

    rp = sub.add_parser("replay", help="replay an episode onto the broker")
    rp.add_argument("file")
    rp.add_argument("--broker", default="127.0.0.1:7600")
    rp.set_defaults(fn=cmd_replay)

    bt = sub.add_parser("bc-train", help="train a k-NN policy from episodes")
    bt.add_argument("episodes", nargs="+")
    bt.add_argument("--k", type=int, default=3)
    bt.add_argument("--out", required=True)
    bt.set_defaults(fn=cmd_bc_train)

    br = sub.add_parser("bc-run", help="execute a trained policy")
    br.add_argument("policy")
    br.add_argument("--broker", default="127.0.0.1:7600")
    br.add_argument("--rate-hz", type=float, default=25.0)
    br.add_argument("--steps", type=int, default=None)
    br.add_argument("--duration-s", type=float, default=None)
    br.set_defaults(fn=cmd_bc_run)

    d = sub.add_parser("diff", help="discrepancy report between two episodes")
    d.add_argument("demo")
    d.add_argument("executed")
    d.set_defaults(fn=cmd_diff)

    t = sub.add_parser("teleop", help="run the teleop coordinator")
    t.add_argument("--leader", default="leader")
    t.add_argument("--follower", default="follower")
    t.add_argument("--max-step-mm", type=float, default=2.0)
    t.add_argument("--max-rot-mrad", type=float, default=10.0)
    t.add_argument("--absolute", action="store_true",
                   help="mirror absolute pose instead of relative-from-engage")
    t.add_argument("--broker", default="127.0.0.1:7600",
                   help="follower claw's broker")
    t.add_argument("--leader-broker", default=None,
                   help="leader claw's broker (defaults to --broker)")
    t.add_argument("--duration-s", type=float, default=None)
    t.set_defaults(fn=cmd_teleop)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ClawError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
