"""Scenario configuration: strict YAML mapped onto dataclasses.

Every section is a dataclass; unknown keys anywhere raise ConfigError so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..errors import ConfigError


@dataclass
class PlantConfig:
    kind: str = "double_integrator"
    params: dict = field(default_factory=dict)


@dataclass
class InitConfig:
    # zeros | fixed | uniform | normal | random_pd | pretrained
    kind: str = "zeros"
    values: list | None = None
    low: Any = -1.0
    high: Any = 1.0
    mean: Any = 0.0
    std: Any = 1.0
    scenario: str | None = None  # pretrained: episodic scenario providing theta0


@dataclass
class ControllerConfig:
    kind: str = "state_feedback"
    options: dict = field(default_factory=dict)
    init: InitConfig = field(default_factory=InitConfig)


@dataclass
class ReferenceConfig:
    # constant | lane_change
    kind: str = "constant"
    value: list = field(default_factory=lambda: [0.0])
    amplitude: float = 1.5
    period: float = 7.5
    first_sign: float = 1.0
    speed: float = 70.0 / 3.6
    speed_after: float | None = None
    speed_switch_time: float | None = None


@dataclass
class TaskConfig:
    x0: list = field(default_factory=lambda: [0.0, 0.0])
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)


@dataclass
class BlockConfig:
    type: str = "state"
    args: dict = field(default_factory=dict)


@dataclass
class ObjectiveConfig:
    blocks: list = field(default_factory=list)  # list[BlockConfig]
    horizon: int | None = None  # defaults to the episode/window length


@dataclass
class CalibratorConfig:
    filter: str = "ukf"
    w0: float = 1.0 / 3.0
    c_scale: Any = 1.0  # scalar or per-parameter diagonal
    p0_scale: Any = 1.0
    penalty: float = 1e3
    fd_eps: float = 1e-5


@dataclass
class ModeConfig:
    kind: str = "episodic"
    iterations: int = 100
    steps: int = 150  # episodic: episode length; online: total run length
    window: int = 50  # online only


@dataclass
class DisturbanceConfig:
    kind: str = "none"
    value: float = 0.0
    std: float = 0.0


@dataclass
class SafetySection:
    enabled: bool = False
    eigen_interval: list = field(default_factory=lambda: [1e-3, 1e3])
    rollout_horizon: int = 200
    contraction: float = 0.5


@dataclass
class OutputConfig:
    dir: str = "autocal_out"
    figures: bool = True


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    model: PlantConfig | None = None  # replay model; defaults to the plant
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    calibrator: CalibratorConfig = field(default_factory=CalibratorConfig)
    mode: ModeConfig = field(default_factory=ModeConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    safety: SafetySection = field(default_factory=SafetySection)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str | None = None  # file the config came from, for relative lookups


_NESTED = {
    (ScenarioConfig, "plant"): PlantConfig,
    (ScenarioConfig, "model"): PlantConfig,
    (ScenarioConfig, "controller"): ControllerConfig,
    (ScenarioConfig, "task"): TaskConfig,
    (ScenarioConfig, "objective"): ObjectiveConfig,
    (ScenarioConfig, "calibrator"): CalibratorConfig,
    (ScenarioConfig, "mode"): ModeConfig,
    (ScenarioConfig, "disturbance"): DisturbanceConfig,
    (ScenarioConfig, "safety"): SafetySection,
    (ScenarioConfig, "output"): OutputConfig,
    (ControllerConfig, "init"): InitConfig,
    (TaskConfig, "reference"): ReferenceConfig,
}


def _build(cls, data, path: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, val in data.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, val, f"{path}.{key}")
        elif cls is ObjectiveConfig and key == "blocks":
            if not isinstance(val, list):
                raise ConfigError(f"{path}.blocks: expected a list")
            blocks = []
            for i, b in enumerate(val):
                if not isinstance(b, dict) or "type" not in b:
                    raise ConfigError(f"{path}.blocks[{i}]: each block needs a 'type'")
                b = dict(b)
                blocks.append(BlockConfig(type=b.pop("type"), args=b))
            kwargs[key] = blocks
        else:
            kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(data: dict, source: str | None = None) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "config")
    if source is not None:
        cfg.source = source
    validate(cfg)
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["objective"]["blocks"] = [{"type": b["type"], **b["args"]} for b in d["objective"]["blocks"]]
    d.pop("source", None)
    return d


def validate(cfg: ScenarioConfig) -> None:
    from ..controllers import CONTROLLERS
    from ..objectives import BLOCKS
    from ..plants import PLANTS

    if cfg.plant.kind not in PLANTS:
        raise ConfigError(f"plant.kind {cfg.plant.kind!r} not in {sorted(PLANTS)}")
    if cfg.model is not None and cfg.model.kind not in PLANTS:
        raise ConfigError(f"model.kind {cfg.model.kind!r} not in {sorted(PLANTS)}")
    if cfg.controller.kind not in CONTROLLERS:
        raise ConfigError(f"controller.kind {cfg.controller.kind!r} not in {sorted(CONTROLLERS)}")
    if cfg.controller.init.kind not in ("zeros", "fixed", "uniform", "normal", "random_pd", "pretrained"):
        raise ConfigError(f"controller.init.kind {cfg.controller.init.kind!r} is not recognized")
    if cfg.controller.init.kind == "pretrained" and not cfg.controller.init.scenario:
        raise ConfigError("controller.init.kind = pretrained needs controller.init.scenario")
    if cfg.controller.init.kind == "fixed" and cfg.controller.init.values is None:
        raise ConfigError("controller.init.kind = fixed needs controller.init.values")
    if cfg.task.reference.kind not in ("constant", "lane_change"):
        raise ConfigError(f"task.reference.kind {cfg.task.reference.kind!r} is not recognized")
    if not cfg.objective.blocks:
        raise ConfigError("objective.blocks must list at least one block")
    for b in cfg.objective.blocks:
        if b.type not in BLOCKS:
            raise ConfigError(f"objective block type {b.type!r} not in {sorted(BLOCKS)}")
    if cfg.calibrator.filter not in ("ukf", "ekf"):
        raise ConfigError("calibrator.filter must be 'ukf' or 'ekf'")
    if not -1 < cfg.calibrator.w0 < 1:
        raise ConfigError("calibrator.w0 must lie in (-1, 1)")
    c_scale = np.asarray(cfg.calibrator.c_scale, dtype=float)
    p0_scale = np.asarray(cfg.calibrator.p0_scale, dtype=float)
    if c_scale.ndim > 1 or p0_scale.ndim > 1:
        raise ConfigError("calibrator scales must be scalars or flat lists")
    if np.any(c_scale < 0) or np.any(p0_scale <= 0) or cfg.calibrator.penalty <= 0:
        raise ConfigError("calibrator scales must be positive (c_scale may be zero)")
    if cfg.mode.kind not in ("episodic", "online"):
        raise ConfigError("mode.kind must be 'episodic' or 'online'")
    if cfg.mode.iterations < 0 or cfg.mode.steps < 1 or cfg.mode.window < 1:
        raise ConfigError("mode.iterations >= 0, mode.steps >= 1 and mode.window >= 1 required")
    if cfg.disturbance.kind not in ("none", "constant", "gaussian"):
        raise ConfigError("disturbance.kind must be none, constant or gaussian")
    if len(cfg.safety.eigen_interval) != 2 or not 0 < cfg.safety.eigen_interval[0] < cfg.safety.eigen_interval[1]:
        raise ConfigError("safety.eigen_interval must be [low, high] with 0 < low < high")


def load_config(path) -> ScenarioConfig:
    """Load a YAML scenario from a path, or a packaged scenario by name."""
    p = Path(path)
    if not p.exists():
        p = packaged_scenario_path(str(path))
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    return config_from_dict(data or {}, source=str(p))


def packaged_scenarios() -> list[str]:
    root = importlib.resources.files("autocal") / "scenarios"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def packaged_scenario_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".yaml") else name
    p = Path(str(importlib.resources.files("autocal") / "scenarios" / f"{stem}.yaml"))
    if not p.exists():
        raise ConfigError(f"no config file {name!r} and no packaged scenario of that name")
    return p
