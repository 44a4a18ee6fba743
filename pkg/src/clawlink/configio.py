"""Config file loading (flat YAML, documented in the README).

Every `claw node` invocation reads one file; sections are plain key-value
maps so files stay hand-editable at the bench.
"""

from __future__ import annotations

import numpy as np
import yaml

from .core import FourBarParams, Pose6D
from .errors import ConfigError
from .fingertip import CameraModel, LatticeModel, build_grid_lattice
from .nodes import MotorModel, TrajectoryScript, constant_contact
from .core import Wrench6D
from .runtime import DelayModel, NodeConfig


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data)}")
    return data


def node_config(d: dict, default_id: str = "node") -> NodeConfig:
    return NodeConfig(
        node_id=str(d.get("node_id", default_id)),
        broker_addr=str(d.get("broker", "127.0.0.1:7600")),
        rates_hz={str(k): float(v) for k, v in (d.get("rates") or {}).items()},
        clock_skew_ns=int(float(d.get("clock_skew_ms", 0.0)) * 1e6),
        delay=DelayModel(fixed_ms=float(d.get("delay_fixed_ms", 0.0)),
                         jitter_ms=float(d.get("delay_jitter_ms", 0.0)),
                         seed=int(d.get("delay_seed", 0))),
        queue_capacity=int(d.get("queue_capacity", 1024)),
    )


def pose_from(d: dict) -> Pose6D:
    return Pose6D(np.asarray(d.get("pos", [0.0, 0.0, 0.0]), dtype=float),
                  np.asarray(d.get("quat", [1.0, 0.0, 0.0, 0.0]), dtype=float))


def script_from(items) -> TrajectoryScript:
    waypoints = []
    for wp in items:
        waypoints.append((float(wp["t"]), pose_from(wp),
                          float(wp.get("grip", 0.05))))
    return TrajectoryScript(waypoints=tuple(waypoints))


def lattice_from(d: dict | None) -> LatticeModel:
    d = d or {}
    return build_grid_lattice(
        int(d.get("nx", 5)), int(d.get("ny", 5)), int(d.get("nz", 2)),
        spacing=float(d.get("spacing", 0.005)), k=float(d.get("k", 800.0)),
        force_bound=float(d.get("force_bound", 50.0)),
        torque_bound=float(d.get("torque_bound", 2.0)))


def camera_from(d: dict | None) -> CameraModel:
    d = d or {}
    return CameraModel(
        fx=float(d.get("fx", 500.0)), fy=float(d.get("fy", 500.0)),
        cx=float(d.get("cx", 320.0)), cy=float(d.get("cy", 240.0)),
        pose=pose_from(d) if ("pos" in d or "quat" in d)
        else Pose6D(np.array([0.01, 0.01, -0.025]), np.array([1.0, 0, 0, 0])),
        resolution=(int(d.get("width", 640)), int(d.get("height", 480))))


def motor_from(d: dict | None) -> MotorModel:
    d = d or {}
    fb = d.get("fourbar") or {}
    return MotorModel(
        v_max=float(d.get("v_max", 0.1)),
        contact_stiffness=float(d.get("stiffness", 500.0)),
        force_cap=float(d.get("force_cap", 20.0)),
        backdrive_threshold=float(d.get("backdrive", 5.0)),
        dt_s=float(d.get("dt", 0.01)),
        obstacle_width=(None if d.get("obstacle") in (None, "none")
                        else float(d["obstacle"])),
        fourbar=FourBarParams(
            link_length=float(fb.get("link_length", 0.05)),
            closed_width=float(fb.get("closed_width", 0.01)),
            torque_cap=float(fb.get("torque_cap", 0.5))))


def contact_from(d: dict | None):
    d = d or {}
    w = Wrench6D(np.asarray(d.get("force", [0.0, 0.0, 0.0]), dtype=float),
                 np.asarray(d.get("torque", [0.0, 0.0, 0.0]), dtype=float))
    return constant_contact(w), bool(d.get("couple_grip", False))
