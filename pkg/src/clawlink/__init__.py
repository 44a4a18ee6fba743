"""ClawLink: desk-scale gripper middleware.

Simulated phone/motor/fingertip nodes stream multi-modal data over a
length-prefixed binary pub/sub protocol; a vision-based estimator recovers
6D fingertip wrenches from lattice marker displacements; teleoperation and
a record/replay + behavioral-cloning pipeline close the
demonstration-to-deployment loop.
"""

from .core import (FourBarParams, GripState, Pose6D, Timestamp, Wrench6D,
                   fourbar_jaw_force, fourbar_width, pose_compose,
                   pose_interpolate, pose_inverse)
from .errors import ClawError
from .fingertip import (CameraModel, Deformation, LatticeModel, MarkerSet,
                        build_grid_lattice, project_markers,
                        render_observation, solve_equilibrium)
from .proto.framing import Message, Topic, decode_message, encode_message
from .proto.clocksync import ClockSample, clock_offset, to_reference
from .wrench import (CalibrationSet, EstimatorModel, calibrate,
                     cross_validate, estimate)

__version__ = "0.1.0"

__all__ = [
    "CalibrationSet", "CameraModel", "ClawError", "ClockSample",
    "Deformation", "EstimatorModel", "FourBarParams", "GripState",
    "LatticeModel", "MarkerSet", "Message", "Pose6D", "Timestamp", "Topic",
    "Wrench6D", "build_grid_lattice", "calibrate", "clock_offset",
    "cross_validate", "decode_message", "encode_message", "estimate",
    "fourbar_jaw_force", "fourbar_width", "pose_compose", "pose_interpolate",
    "pose_inverse", "project_markers", "render_observation",
    "solve_equilibrium", "to_reference",
]
