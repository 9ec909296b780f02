"""Episodic and online calibration loops."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..calibrator import FILTERS, CalibratorBelief, Replay, ReplayWindow, WindowBuffer
from ..controllers import Controller, make_controller
from ..errors import ConfigError, NotPositiveDefinite, SingularInnovation
from ..objectives import BLOCKS, Block, Specification, Trace
from ..plants import DisturbanceModel, Plant, make_plant, recover_process_noise
from ..safety import SafetyConfig, SafetyGate, SafetyVerdict
from ..simulation import rollout
from .config import ReferenceConfig, ScenarioConfig, load_config

DIVERGED_COST = 1e6


@dataclass
class Reference:
    """Reference generator indexed by sample number."""

    cfg: ReferenceConfig
    Ts: float

    def at(self, k: int) -> np.ndarray:
        c = self.cfg
        if c.kind == "constant":
            return np.atleast_1d(np.asarray(c.value, dtype=float))
        t = k * self.Ts
        # small offset keeps period boundaries robust to float rounding of k * Ts
        sign = c.first_sign * (-1.0) ** math.floor(t / c.period + 1e-9)
        v = c.speed
        if c.speed_after is not None and c.speed_switch_time is not None and t >= c.speed_switch_time - 1e-9:
            v = c.speed_after
        return np.array([c.amplitude * sign, v])

    def sequence(self, k0: int, n: int) -> np.ndarray:
        return np.stack([self.at(k) for k in range(k0, k0 + n)])


@dataclass
class RunHistory:
    """Per-iteration (episodic) or per-step (online) record."""

    mode: str
    theta_names: list[str]
    index: list[int] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    theta: list[np.ndarray] = field(default_factory=list)
    trace_P: list[float] = field(default_factory=list)
    accepted: list[bool | None] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)
    trace: Trace | None = None  # online: whole run; episodic: final episode
    first_trace: Trace | None = None  # episodic: episode under theta_0
    diverged: bool = False
    seed: int = 0
    notes: dict = field(default_factory=dict)

    def append(self, index, cost, theta, trace_P, accepted=None, reason=""):
        self.index.append(int(index))
        self.cost.append(float(cost))
        self.theta.append(np.array(theta, dtype=float))
        self.trace_P.append(float(trace_P))
        self.accepted.append(accepted)
        self.reasons.append(reason)

    def __len__(self) -> int:
        return len(self.index)

    @property
    def costs(self) -> np.ndarray:
        return np.asarray(self.cost)

    @property
    def thetas(self) -> np.ndarray:
        return np.stack(self.theta) if self.theta else np.zeros((0, len(self.theta_names)))


# ---------------------------------------------------------------------------
# setup


@dataclass
class Setup:
    cfg: ScenarioConfig
    plant: Plant
    model: Plant
    controller: Controller
    blocks: tuple[Block, ...]
    reference: Reference
    theta0: np.ndarray
    belief0: CalibratorBelief
    gate: SafetyGate | None
    disturbance: DisturbanceModel

    def spec(self, horizon: int) -> Specification:
        return Specification(self.blocks, self.cfg.objective.horizon or horizon)


def build_blocks(cfg: ScenarioConfig) -> tuple[Block, ...]:
    out = []
    for b in cfg.objective.blocks:
        try:
            out.append(BLOCKS[b.type](**b.args))
        except TypeError as exc:
            raise ConfigError(f"objective block {b.type}: {exc}") from None
    return tuple(out)


def _random_pd(rng, n):
    G = rng.normal(size=(n, n))
    return G @ G.T + 1e-3 * np.eye(n)


def initial_theta(cfg: ScenarioConfig, controller: Controller, rng) -> np.ndarray:
    init = cfg.controller.init
    n = controller.n_theta
    if init.kind == "zeros":
        return np.zeros(n)
    if init.kind == "fixed":
        th = np.asarray(init.values, dtype=float).ravel()
        if th.size != n:
            raise ConfigError(f"controller.init.values has {th.size} entries, {controller.name} needs {n}")
        return th
    if init.kind == "uniform":
        return rng.uniform(np.broadcast_to(init.low, n), np.broadcast_to(init.high, n))
    if init.kind == "normal":
        return rng.normal(np.broadcast_to(init.mean, n), np.broadcast_to(init.std, n))
    if init.kind == "random_pd":
        if controller.name == "optimal":
            Q = _random_pd(rng, 2)
            return np.array([Q[0, 0], Q[0, 1], Q[1, 1], _random_pd(rng, 1)[0, 0]])
        if controller.name == "bicycle_optimal":
            return np.log(np.concatenate([np.diag(_random_pd(rng, 4)), np.diag(_random_pd(rng, 2))]))
        if controller.name == "lane_optimal":
            return np.diag(_random_pd(rng, 2)).copy()
        raise ConfigError(f"random_pd initialization is not defined for {controller.name}")
    if init.kind == "pretrained":
        src = Path(init.scenario)
        if not src.is_absolute() and cfg.source is not None and (Path(cfg.source).parent / src).exists():
            src = Path(cfg.source).parent / src
        return _pretrained_theta(str(src), cfg.seed).copy()
    raise ConfigError(f"unknown init kind {init.kind!r}")


@functools.lru_cache(maxsize=64)
def _pretrained_theta(source: str, seed: int) -> np.ndarray:
    # runs are deterministic in (config, seed), so the final mean can be reused
    pre = dataclasses.replace(load_config(source), seed=seed)
    return run_episodic(pre).theta[-1]


def build(cfg: ScenarioConfig) -> Setup:
    plant = make_plant(cfg.plant.kind, **cfg.plant.params)
    mcfg = cfg.model or cfg.plant
    model = make_plant(mcfg.kind, **mcfg.params)
    if model.n_full != model.n_x:
        raise ConfigError("the replay model must be a plant without hidden states")
    if model.n_x != plant.n_x or model.n_u != plant.n_u:
        raise ConfigError("plant and replay model must share state and input dimensions")
    controller = make_controller(cfg.controller.kind, model, **cfg.controller.options)
    rng = np.random.default_rng([cfg.seed, 0])
    theta0 = initial_theta(cfg, controller, rng)
    c = cfg.calibrator
    belief0 = CalibratorBelief.initial(theta0, c.p0_scale, c.c_scale, c.w0)
    s = cfg.safety
    gate = None
    if s.enabled:
        gate = SafetyGate(
            controller,
            model,
            SafetyConfig(True, tuple(s.eigen_interval), s.rollout_horizon, s.contraction),
        )
    d = cfg.disturbance
    dist = DisturbanceModel(d.kind, d.value, d.std, np.random.default_rng([cfg.seed, 1]))
    x0 = np.asarray(cfg.task.x0, dtype=float)
    if x0.size != plant.n_x:
        raise ConfigError(f"task.x0 has {x0.size} entries, plant state has {plant.n_x}")
    return Setup(
        cfg, plant, model, controller, build_blocks(cfg), Reference(cfg.task.reference, plant.Ts),
        theta0, belief0, gate, dist,
    )


# ---------------------------------------------------------------------------
# update step shared by both modes


def propose_and_gate(setup: Setup, belief: CalibratorBelief, window: ReplayWindow, spec: Specification,
                     x_now, z_now, ref_now, proposal_hook=None):
    """Run one filter update and the acceptance test.

    Returns ``(belief_next, accepted, reason)``. Filter failures keep the
    previous belief. Rejected proposals keep the mean but adopt the
    posterior covariance. ``proposal_hook(theta)`` may replace the
    proposed mean (used to inject adversarial proposals in tests).
    """
    c = setup.cfg.calibrator
    h = Replay(window, setup.controller, setup.model, spec, c.penalty)
    try:
        if c.filter == "ukf":
            res = FILTERS["ukf"](belief, h, h.y, h.C_v)
        else:
            res = FILTERS["ekf"](belief, h, h.y, h.C_v, c.fd_eps)
    except (SingularInnovation, NotPositiveDefinite) as exc:
        return belief, False, f"filter_error: {exc}"
    proposed = res.belief.theta
    if proposal_hook is not None:
        proposed = np.asarray(proposal_hook(proposed), dtype=float)
    verdict = gate_proposal(setup, belief.theta, proposed, x_now, z_now, ref_now)
    if verdict.accepted:
        return res.belief.with_theta(proposed), True, verdict.reason
    return res.belief.with_theta(belief.theta), False, verdict.reason


def gate_proposal(setup: Setup, theta_old, theta_new, x_now, z_now, ref_now) -> SafetyVerdict:
    # infeasible proposals are never applied, with or without the gate
    _, ok = setup.controller.prepare(theta_new)
    if not np.all(ok):
        return SafetyVerdict(False, "infeasible", "controller rejected parameters")
    if setup.gate is None:
        return SafetyVerdict(True, "ok")
    return setup.gate.check(theta_old, theta_new, x_now, z_now, ref_now)


# ---------------------------------------------------------------------------
# episodic mode


def simulate_episode(setup: Setup, theta, rng_noise=None) -> tuple[Trace, bool, np.ndarray]:
    """One episode on the true plant; returns (trace, diverged, plant disturbance)."""
    cfg = setup.cfg
    n = cfg.mode.steps
    x0 = np.asarray(cfg.task.x0, dtype=float)
    refs = setup.reference.sequence(0, n + 1)
    z0 = setup.controller.initial_state(x0, refs[0])
    d = setup.disturbance.sample(n)
    noise = setup.plant.disturbance_vector(d)
    params, ok = setup.controller.prepare(theta)
    if not np.all(ok):
        raise ConfigError(f"episode parameters are infeasible: {theta}")
    trace, diverged = rollout(setup.plant, setup.controller, params, x0, z0, refs, noise)
    return trace, bool(diverged), d


def episode_window(setup: Setup, trace: Trace) -> ReplayWindow:
    with np.errstate(all="ignore"):
        W = recover_process_noise(setup.model, trace.states[1:], trace.states[:-1], trace.inputs)
    return ReplayWindow(trace.states[0], trace.z0, W, trace.refs, trace.states, trace.inputs)


def run_episodic(cfg: ScenarioConfig, setup: Setup | None = None, proposal_hook=None) -> RunHistory:
    setup = setup or build(cfg)
    if cfg.mode.kind != "episodic":
        raise ConfigError("run_episodic needs mode.kind = episodic")
    spec = setup.spec(cfg.mode.steps)
    belief = setup.belief0
    hist = RunHistory("episodic", setup.controller.layout.names, seed=cfg.seed)
    x0 = np.asarray(cfg.task.x0, dtype=float)
    ref0 = setup.reference.at(0)
    z0 = setup.controller.initial_state(x0, ref0)
    for i in range(cfg.mode.iterations + 1):
        trace, diverged, _ = simulate_episode(setup, belief.theta)
        if i == 0:
            hist.first_trace = trace
        cost = DIVERGED_COST if diverged else float(spec.cost(trace))
        if not np.isfinite(cost):
            cost, diverged = DIVERGED_COST, True
        accepted, reason = None, ""
        theta_i, trP = belief.theta, float(np.trace(belief.P))
        if i < cfg.mode.iterations:
            window = episode_window(setup, trace)
            belief, accepted, reason = propose_and_gate(setup, belief, window, spec, x0, z0, ref0, proposal_hook)
        if diverged:
            reason = (reason + "; " if reason else "") + "episode_diverged"
        hist.append(i, cost, theta_i, trP, accepted, reason)
        hist.trace = trace
    return hist


# ---------------------------------------------------------------------------
# online mode


def run_online(cfg: ScenarioConfig, setup: Setup | None = None, adapt: bool = True,
               proposal_hook=None, track_lyapunov: bool = False) -> RunHistory:
    """Continuous run with one update per step once the window is full.

    ``adapt=False`` runs the same disturbance realization with frozen
    parameters, which is the baseline for adaptation comparisons.
    """
    setup = setup or build(cfg)
    if cfg.mode.kind != "online":
        raise ConfigError("run_online needs mode.kind = online")
    n, N = cfg.mode.steps, cfg.mode.window
    spec = setup.spec(N)
    plant, ctrl = setup.plant, setup.controller
    belief = setup.belief0
    buffer = WindowBuffer(setup.model, N)
    hist = RunHistory("online", ctrl.layout.names, seed=cfg.seed)
    disturbance = plant.disturbance_vector(setup.disturbance.sample(n))

    x = np.asarray(cfg.task.x0, dtype=float)
    s = plant.lift(x)
    ref = setup.reference.at(0)
    z = ctrl.initial_state(x, ref)
    states = np.full((n + 1, plant.n_x), np.nan)
    inputs = np.full((n, ctrl.n_u), np.nan)
    refs = setup.reference.sequence(0, n + 1)
    states[0] = x
    z0 = z.copy()
    V = [] if track_lyapunov else None
    params, _ = ctrl.prepare(belief.theta)
    params_theta = belief.theta
    for k in range(n):
        if not np.array_equal(params_theta, belief.theta):
            params, _ = ctrl.prepare(belief.theta)
            params_theta = belief.theta
        if V is not None:
            V.append(_lyapunov_value(setup, belief.theta, x, ref, z))
        theta_k, trP = belief.theta, float(np.trace(belief.P))
        with np.errstate(all="ignore"):
            u, z_next = ctrl.act(x, ref, z, params)
            s = plant.step(s, u) + disturbance[k]
        x_next = plant.measure(s)
        ref_next = refs[k + 1]
        inputs[k] = u
        states[k + 1] = x_next
        if plant.is_diverged(s):
            hist.append(k, np.nan, theta_k, trP, None, "run_diverged")
            hist.diverged = True
            break
        buffer.push_sample(x, u, x_next, z, ref, ref_next)
        cost, accepted, reason = np.nan, None, ""
        if buffer.full:
            window = buffer.window()
            cost = float(spec.cost(window.logged_trace()))
            if adapt:
                belief, accepted, reason = propose_and_gate(
                    setup, belief, window, spec, x_next, z_next, ref_next, proposal_hook
                )
        hist.append(k, cost, theta_k, trP, accepted, reason)
        x, z, ref = x_next, z_next, ref_next
    hist.trace = Trace(states, inputs, refs, z0)
    if V is not None:
        hist.notes["lyapunov"] = np.asarray(V)
    return hist


def _lyapunov_value(setup: Setup, theta, x, ref, z) -> float:
    gate = setup.gate or SafetyGate(setup.controller, setup.model)
    try:
        cert = gate.certificate(theta)
        return float(cert(setup.controller.augmented_state(x, ref, z)))
    except Exception:
        return float("nan")


def run(cfg: ScenarioConfig, **kwargs) -> RunHistory:
    if cfg.mode.kind == "episodic":
        return run_episodic(cfg, **kwargs)
    return run_online(cfg, **kwargs)


def scenario_lane_change(cfg: ScenarioConfig, **kwargs) -> RunHistory:
    """Online lane-change run; checks the scenario shape before running."""
    if cfg.mode.kind != "online" or cfg.task.reference.kind != "lane_change":
        raise ConfigError("lane-change scenarios run online with a lane_change reference")
    if cfg.plant.kind not in ("kinematic_bicycle", "dynamic_bicycle"):
        raise ConfigError("lane-change scenarios need a bicycle plant")
    return run_online(cfg, **kwargs)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return dataclasses.replace(cfg, seed=int(seed))


def sweep(cfg: ScenarioConfig, seeds) -> list[RunHistory]:
    """Independent runs over ``seeds``; sequential and deterministic."""
    return [run(with_seed(cfg, s)) for s in seeds]
