"""Controller calibration with Kalman-filter recursions over window replays."""

from .calibrator import (
    CalibratorBelief,
    Replay,
    ReplayWindow,
    WindowBuffer,
    ekf_step,
    ekf_update,
    replay_h,
    sigma_points,
    ukf_step,
    ukf_update,
)
from .controllers import LAYOUTS, make_controller, pack_params, unpack_params
from .objectives import Specification, Trace, lane_spec, objective_cost, tracking_spec
from .plants import DoubleIntegrator, DynamicBicycleMismatch, KinematicBicycle, make_plant
from .safety import SafetyConfig, SafetyGate, lyapunov_for, safety_gate

__version__ = "0.1.0"

__all__ = [
    "LAYOUTS",
    "CalibratorBelief",
    "DoubleIntegrator",
    "DynamicBicycleMismatch",
    "KinematicBicycle",
    "Replay",
    "ReplayWindow",
    "SafetyConfig",
    "SafetyGate",
    "Specification",
    "Trace",
    "WindowBuffer",
    "ekf_step",
    "ekf_update",
    "lane_spec",
    "lyapunov_for",
    "make_controller",
    "make_plant",
    "objective_cost",
    "pack_params",
    "replay_h",
    "safety_gate",
    "sigma_points",
    "tracking_spec",
    "ukf_step",
    "ukf_update",
    "unpack_params",
]
