"""Experiment orchestration: configs, runners, metrics and output."""

from .config import ScenarioConfig, config_from_dict, load_config, packaged_scenarios
from .export import export_csv, export_trace_csv, read_history_csv, write_manifest
from .metrics import block_means, decay_factor, median_curve, period_costs, run_cost
from .runner import RunHistory, build, run, run_episodic, run_online, scenario_lane_change, sweep

__all__ = [
    "RunHistory",
    "ScenarioConfig",
    "block_means",
    "build",
    "config_from_dict",
    "decay_factor",
    "export_csv",
    "export_trace_csv",
    "load_config",
    "median_curve",
    "packaged_scenarios",
    "period_costs",
    "read_history_csv",
    "run",
    "run_cost",
    "run_episodic",
    "run_online",
    "scenario_lane_change",
    "sweep",
    "write_manifest",
]
