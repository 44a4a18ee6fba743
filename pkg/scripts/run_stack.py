#!/usr/bin/env python3
"""Run a live desk-scale stack in one process: broker, gateway, phone,
motor, two fingertips, recorder and a sync-owning teleop coordinator.

This is the system the dashboard connects to:

    python3 scripts/run_stack.py --static frontend/dist

then open http://127.0.0.1:7601/ in a browser (or point the dashboard dev
server at ws://127.0.0.1:7601/ws).
"""

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from clawlink.core import Pose6D
from clawlink.nodes import (FingertipNode, MotorModel, MotorNode, PhoneNode,
                            TrajectoryScript, constant_contact)
from clawlink.core import Wrench6D
from clawlink.proto.gateway import GatewayServer
from clawlink.proto.tcp import BrokerClient, BrokerServer
from clawlink.runtime import NodeConfig, WallClockRuntime
from clawlink.scenarios import TOPIC_NODES, stiff_sensing
from clawlink.sync import EpisodeHeader, RecorderNode


def circle_script(radius=0.08, period_s=8.0, laps=1000):
    steps = 32
    waypoints = []
    for i in range(steps * laps + 1):
        t = i * period_s / steps
        a = 2 * math.pi * i / steps
        pose = Pose6D(np.array([radius * math.cos(a), radius * math.sin(a),
                                0.15]),
                      np.array([1.0, 0, 0, 0]))
        grip = 0.06 + 0.04 * math.sin(a / 2) ** 2
        waypoints.append((t, pose, grip))
    return TrajectoryScript(waypoints=tuple(waypoints))


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--broker-port", type=int, default=7600)
    ap.add_argument("--gateway-port", type=int, default=7601)
    ap.add_argument("--static", default=None,
                    help="dashboard bundle directory to serve at /")
    ap.add_argument("--episode-out", default="/tmp/claw_episode.mgcl")
    ap.add_argument("--duration-s", type=float, default=None)
    ap.add_argument("--exit-on-stdin-close", action="store_true",
                    help="terminate when stdin reaches EOF (supervisors)")
    args = ap.parse_args()

    if args.exit_on_stdin_close:
        import os
        import threading

        def stdin_watch():
            try:
                while sys.stdin.buffer.read(4096):
                    pass
            except OSError:
                pass
            os._exit(0)

        threading.Thread(target=stdin_watch, daemon=True).start()

    server = BrokerServer(port=args.broker_port)
    server.start()
    print(f"broker on :{server.port}")

    static = args.static
    if static is None:
        default_dist = Path(__file__).resolve().parent.parent / "frontend" / "dist"
        if default_dist.is_dir():
            static = str(default_dist)
    gateway = GatewayServer(broker_port=server.port, port=args.gateway_port,
                            static_dir=static)
    gateway.start()
    print(f"gateway on :{gateway.port}"
          + (f" serving {static}" if static else " (no static bundle)"))

    rt = WallClockRuntime()
    addr = f"127.0.0.1:{server.port}"
    lat, cam, est = stiff_sensing(0)
    print("fingertip estimator calibrated "
          f"(condition {est.condition_number:.2e})")

    nodes = []
    phone = PhoneNode(NodeConfig(node_id="phone", broker_addr=addr,
                                 rates_hz={"pose": 60, "rgb": 10, "depth": 10}),
                      script=circle_script())
    nodes.append(phone)
    motor = MotorNode(NodeConfig(node_id="motor", broker_addr=addr),
                      MotorModel(obstacle_width=0.045), start_width=0.10)
    nodes.append(motor)
    for side, seed in (("l", 40), ("r", 41)):
        nodes.append(FingertipNode(
            NodeConfig(node_id=f"tip_{side}", broker_addr=addr,
                       rates_hz={"markers": 30}),
            side=side, lattice=lat, camera=cam, estimator=est,
            contact=constant_contact(Wrench6D(np.array([0.25, 0.05, 0.0]),
                                              np.zeros(3))),
            couple_grip=True, seed=seed, grip_source="motor"))
    nodes.append(RecorderNode(
        NodeConfig(node_id="recorder", broker_addr=addr), args.episode_out,
        TOPIC_NODES, header=EpisodeHeader(), tick_hz=50.0))

    clients = []
    for logic in nodes:
        client = BrokerClient(logic.config, topics=logic.subscriptions())
        client.connect()
        rt.add_node(logic, logic.config, client)
        clients.append(client)
        print(f"node {logic.config.node_id} up")

    print("stack running; Ctrl-C to stop "
          "(dashboard: record + grip controls are live)")
    try:
        if args.duration_s:
            time.sleep(args.duration_s)
        else:
            while True:
                time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        rt.stop()
        for c in clients:
            c.close()
        gateway.stop()
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
