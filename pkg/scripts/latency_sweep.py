#!/usr/bin/env python3
"""Sweep injected one-way network delay and report follower lag and
measured latency statistics from the teleop coordinator."""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from clawlink.core import NS_PER_SEC, Pose6D
from clawlink.nodes import TrajectoryScript
from clawlink.scenarios import build_teleop_loop
from clawlink.teleop import latency_report


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--speed", type=float, default=0.05, help="m/s")
    ap.add_argument("--delays-ms", default="0,5,10,20,40")
    args = ap.parse_args()

    v = args.speed
    script = TrajectoryScript(waypoints=(
        (0.0, Pose6D(np.zeros(3), np.array([1.0, 0, 0, 0])), 0.06),
        (30.0, Pose6D(np.array([v * 30.0, 0, 0]),
                      np.array([1.0, 0, 0, 0])), 0.06)))

    print(f"{'delay_ms':>8} {'max_lag_mm':>11} {'bound_mm':>9} "
          f"{'lat_mean_ms':>12} {'lat_p95_ms':>11}")
    for delay_ms in (float(x) for x in args.delays_ms.split(",")):
        sc = build_teleop_loop(script, leader_delay_ms=delay_ms,
                               leader_skew_ms=7.0)
        sc.net.run_for(2.0)
        sc.coordinator.session.activate(sc.net.now_ns)
        sc.net.run_for(3.0)
        max_lag = 0.0
        for _ in range(500):
            sc.net.run_for(0.01)
            t = sc.net.now_ns / NS_PER_SEC
            leader_true, _ = script.sample(t)
            lag = float(np.linalg.norm(
                leader_true.position - sc.follower_phone.pose.position))
            max_lag = max(max_lag, lag)
        rep = latency_report(sc.coordinator.session)
        bound = v * delay_ms * 1e-3 + 0.002
        print(f"{delay_ms:8.1f} {max_lag * 1e3:11.3f} {bound * 1e3:9.1f} "
              f"{rep['mean_ns'] / 1e6:12.4f} {rep['p95_ns'] / 1e6:11.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
