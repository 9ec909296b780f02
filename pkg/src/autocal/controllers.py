"""Parametric control laws ``u = kappa_theta(x, z)``.

Two layers live here:

* plain functions (``state_feedback``, ``pid_control``, ...) that evaluate a
  single law in error coordinates ``e = p - p_ref``;
* ``Controller`` classes used by the simulators. They split evaluation into
  ``prepare(theta)``, which turns parameter vectors into derived quantities
  (e.g. LQR gains) plus a feasibility mask, and ``act(x, ref, z, params)``,
  which is pure and broadcasts over leading batch axes.

Controllers carry no mutable state besides a gain cache.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InfeasibleParameters, LengthMismatch, NoConvergence, NotSupported
from .numerics import dare_solve, finite_diff_jacobian
from .plants import DoubleIntegrator, KinematicBicycle, Plant

PSD_TOL = 1e-12


# ---------------------------------------------------------------------------
# parameter layouts


@dataclass(frozen=True)
class ParamLayout:
    architecture: str
    slots: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def n_theta(self) -> int:
        return sum(math.prod(shape) for _, shape in self.slots)

    @property
    def names(self) -> list[str]:
        out = []
        for name, shape in self.slots:
            if shape == ():
                out.append(name)
            else:
                out.extend(f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape))
        return out

    def unpack(self, theta) -> dict[str, np.ndarray]:
        """Split ``theta`` (``(..., n_theta)``) into named slots, row-major."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.n_theta,):
            raise LengthMismatch(
                f"{self.architecture} expects {self.n_theta} parameters, got {theta.shape[-1:]}"
            )
        batch = theta.shape[:-1]
        out, i = {}, 0
        for name, shape in self.slots:
            size = math.prod(shape)
            out[name] = theta[..., i : i + size].reshape(batch + shape)
            i += size
        return out

    def pack(self, slots: dict[str, Any]) -> np.ndarray:
        if set(slots) != {name for name, _ in self.slots}:
            raise LengthMismatch(f"{self.architecture}: slot names {sorted(slots)} do not match layout")
        parts = []
        batch = None
        for name, shape in self.slots:
            a = np.asarray(slots[name], dtype=float)
            b = a.shape[: a.ndim - len(shape)]
            if a.shape[a.ndim - len(shape) :] != shape:
                raise LengthMismatch(f"slot {name}: expected trailing shape {shape}, got {a.shape}")
            batch = b if batch is None else batch
            parts.append(a.reshape(b + (-1,)))
        return np.concatenate(parts, axis=-1)


NN_HIDDEN = 10

LAYOUTS = {
    "state_feedback": ParamLayout("state_feedback", (("k_e", ()), ("k_v", ()))),
    "optimal": ParamLayout("optimal", (("q_ee", ()), ("q_ev", ()), ("q_vv", ()), ("r", ()))),
    "pid": ParamLayout("pid", (("theta_P", ()), ("theta_I", ()), ("theta_D", ()))),
    "sliding_mode": ParamLayout("sliding_mode", (("surface", ()), ("gain", ()))),
    "output_feedback": ParamLayout(
        "output_feedback", (("k_p", ()), ("k_v", ()), ("l_p", ()), ("l_v", ()))
    ),
    "neural_network": ParamLayout(
        "neural_network",
        (
            ("W_in", (NN_HIDDEN, 2)),
            ("b_in", (NN_HIDDEN,)),
            ("W_lay", (NN_HIDDEN, NN_HIDDEN)),
            ("b_lay", (NN_HIDDEN,)),
            ("W_out", (NN_HIDDEN,)),
            ("b_out", ()),
        ),
    ),
    "hinf": ParamLayout(
        "hinf",
        tuple((f"{f}_{c}", ()) for f in ("pre", "post") for c in ("num1", "num0", "den1", "den0")),
    ),
    "lane_state_feedback": ParamLayout(
        "lane_state_feedback", (("theta_y", ()), ("theta_psi", ()), ("theta_delta", ()))
    ),
    "lane_optimal": ParamLayout("lane_optimal", (("theta_y", ()), ("theta_psi", ()))),
    "bicycle_optimal": ParamLayout("bicycle_optimal", (("log_q", (4,)), ("log_r", (2,)))),
}


def pack_params(architecture: str, slots: dict[str, Any]) -> np.ndarray:
    return LAYOUTS[architecture].pack(slots)


def unpack_params(architecture: str, theta) -> dict[str, np.ndarray]:
    return LAYOUTS[architecture].unpack(theta)


# ---------------------------------------------------------------------------
# control laws in error coordinates x = (e, v)


def _check_len(theta, n):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (n,):
        raise LengthMismatch(f"expected {n} parameters, got shape {theta.shape}")
    return theta


def state_feedback(x, theta):
    theta = _check_len(theta, 2)
    x = np.asarray(x, dtype=float)
    return theta[..., 0] * x[..., 0] + theta[..., 1] * x[..., 1]


def lqr_weights(theta) -> tuple[np.ndarray, np.ndarray]:
    """``Q = [[t1, t2], [t2, t3]]``, ``R = [[t4]]``; raise if not PSD/PD."""
    t1, t2, t3, t4 = (float(t) for t in _check_len(theta, 4))
    if not all(np.isfinite([t1, t2, t3, t4])):
        raise InfeasibleParameters("non-finite weights")
    if t4 <= 0:
        raise InfeasibleParameters(f"input weight must be positive, got {t4}")
    if t1 < -PSD_TOL or t3 < -PSD_TOL or t1 * t3 - t2 * t2 < -PSD_TOL * max(1.0, t1 * t3):
        raise InfeasibleParameters("state weight is not positive semidefinite")
    return np.array([[t1, t2], [t2, t3]]), np.array([[t4]])


def lqr_gain(theta, plant: DoubleIntegrator | None = None) -> np.ndarray:
    """Feedback row ``k`` with ``u = k @ [e, v]`` from the DARE."""
    plant = plant or DoubleIntegrator()
    Q, R = lqr_weights(theta)
    try:
        _, K = dare_solve(plant.A, plant.B, Q, R)
    except NoConvergence as exc:
        raise InfeasibleParameters(f"DARE failed: {exc}") from None
    return -K[0]


def lqr_control(x, theta, plant: DoubleIntegrator | None = None):
    k = lqr_gain(theta, plant)
    return np.asarray(x, dtype=float) @ k


def pid_weights(theta) -> np.ndarray:
    """Coefficients of ``e_k, e_{k-1}, e_{k-2}`` in the incremental PID law."""
    theta = np.asarray(theta, dtype=float)
    P, I, D = theta[..., 0], theta[..., 1], theta[..., 2]
    return np.stack([P + I + D, I - P - 2.0 * D, D], axis=-1)


def pid_control(e, z, theta):
    """Incremental PID. ``z = (u_{k-1}, e_{k-1}, e_{k-2})``; returns ``(u, z_next)``."""
    theta = _check_len(theta, 3)
    z = np.asarray(z, dtype=float)
    e = np.asarray(e, dtype=float)
    a = pid_weights(theta)
    u = z[..., 0] + a[..., 0] * e + a[..., 1] * z[..., 1] + a[..., 2] * z[..., 2]
    return u, np.stack([u, e, z[..., 1]], axis=-1)


def sliding_mode_control(e, v, theta):
    # np.sign(0) == 0, so the switching term vanishes on the surface
    theta = _check_len(theta, 2)
    lam, gain = theta[..., 0], theta[..., 1]
    return -lam * v - gain * np.sign(e + lam * v)


def output_feedback_control(p_meas, z, theta, plant: DoubleIntegrator | None = None, p_ref=0.0):
    """Observer-based output feedback; ``z = (p_hat, v_hat)``.

    The correction is proportional to ``p_hat - p_meas`` as printed, so
    stabilizing observer gains are negative.
    """
    plant = plant or DoubleIntegrator()
    theta = _check_len(theta, 4)
    z = np.asarray(z, dtype=float)
    p_hat, v_hat = z[..., 0], z[..., 1]
    u = theta[..., 0] * (p_hat - p_ref) + theta[..., 1] * v_hat
    innov = p_hat - np.asarray(p_meas, dtype=float)
    Ts = plant.Ts
    z_next = np.stack(
        [p_hat + Ts * v_hat + theta[..., 2] * innov, v_hat + Ts * u + theta[..., 3] * innov], axis=-1
    )
    return u, z_next


def leaky_relu(x):
    return np.maximum(0.1 * x, x)


def mlp_control(x, theta):
    """2-10-10-1 leaky-ReLU network on ``x = (e, v)``."""
    s = LAYOUTS["neural_network"].unpack(theta)
    x = np.asarray(x, dtype=float)
    h = leaky_relu((s["W_in"] @ x[..., None])[..., 0] + s["b_in"])
    h = leaky_relu((s["W_lay"] @ h[..., None])[..., 0] + s["b_lay"])
    return np.sum(s["W_out"] * h, axis=-1) + s["b_out"]


def finite_horizon_gain(A, B, Q, R, horizon: int) -> np.ndarray:
    """First-stage gain of the unconstrained finite-horizon LQ problem.

    Stage cost ``x'Qx + u'Ru`` for ``k = 0..horizon-1`` and no terminal cost;
    returns ``K`` with ``u_0 = -K x_0``.
    """
    V = np.zeros_like(A)
    K = np.zeros((B.shape[1], A.shape[0]))
    for _ in range(horizon):
        K = np.linalg.solve(R + B.T @ V @ B, B.T @ V @ A)
        V = Q + A.T @ V @ (A - B @ K)
        V = 0.5 * (V + V.T)
    return K


# ---------------------------------------------------------------------------
# controller classes


class _GainCache:
    def __init__(self, maxsize: int = 4096):
        self.maxsize = maxsize
        self._d: OrderedDict = OrderedDict()

    def get(self, key, compute):
        try:
            val = self._d[key]
            self._d.move_to_end(key)
            return val
        except KeyError:
            pass
        try:
            val = compute()
        except InfeasibleParameters as exc:
            val = exc
        self._d[key] = val
        if len(self._d) > self.maxsize:
            self._d.popitem(last=False)
        return val


class Controller:
    """Base class. Subclasses set ``layout`` and implement ``act``."""

    name = "controller"
    n_z = 0
    n_u = 1

    def __init__(self, layout: ParamLayout):
        self.layout = layout

    @property
    def n_theta(self) -> int:
        return self.layout.n_theta

    def prepare(self, theta) -> tuple[dict, np.ndarray]:
        """Derived parameters and a feasibility mask over the batch axes."""
        theta = np.asarray(theta, dtype=float)
        self.layout.unpack(theta)
        feasible = np.all(np.isfinite(theta), axis=-1)
        return {"theta": theta}, feasible

    def initial_state(self, x0, ref0) -> np.ndarray:
        return np.zeros(self.n_z)

    def regulated(self, x, ref) -> np.ndarray:
        """Coordinates the controller drives to zero (used by rollout checks)."""
        raise NotImplementedError

    def act(self, x, ref, z, params):
        raise NotImplementedError

    def rollout_kernel(self, plant, params, x0, refs, noise, batch):
        """Optional compiled rollout; ``None`` means use the generic step loop."""
        return None

    def control(self, x, ref, z, theta):
        """Single evaluation; raises InfeasibleParameters."""
        params, ok = self.prepare(theta)
        if not np.all(ok):
            raise InfeasibleParameters(f"{self.name}: infeasible parameters {theta}")
        return self.act(x, ref, z, params)

    # linear closed loops -------------------------------------------------
    def closed_loop_matrix(self, theta) -> np.ndarray:
        raise NotSupported(f"{self.name} has no linear closed-loop representation")

    def augmented_state(self, x, ref, z) -> np.ndarray:
        raise NotSupported(f"{self.name} has no linear closed-loop representation")


class _DoubleIntegratorController(Controller):
    def __init__(self, layout: ParamLayout, plant: DoubleIntegrator | None = None):
        super().__init__(layout)
        self.plant = plant or DoubleIntegrator()

    def initial_state(self, x0, ref0):
        return np.zeros(self.n_z)

    def regulated(self, x, ref):
        xe = np.array(x, dtype=float)
        xe[..., 0] -= np.asarray(ref, dtype=float)[..., 0]
        return xe

    def augmented_state(self, x, ref, z):
        return self.regulated(x, ref)


class StateFeedbackController(_DoubleIntegratorController):
    name = "state_feedback"

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["state_feedback"], plant)

    def act(self, x, ref, z, params):
        u = state_feedback(self.regulated(x, ref), params["theta"])
        return u[..., None], z

    def closed_loop_matrix(self, theta):
        theta = _check_len(theta, 2)
        return self.plant.A + self.plant.B @ theta[None, :]


class LQRController(_DoubleIntegratorController):
    name = "optimal"

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["optimal"], plant)
        self._cache = _GainCache()

    def gain(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        val = self._cache.get(theta.tobytes(), lambda: lqr_gain(theta, self.plant))
        if isinstance(val, InfeasibleParameters):
            raise val
        return val

    def prepare(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.layout.unpack(theta)
        batch = theta.shape[:-1]
        flat = theta.reshape(-1, 4)
        gains = np.zeros((flat.shape[0], 2))
        ok = np.zeros(flat.shape[0], dtype=bool)
        for i, t in enumerate(flat):
            val = self._cache.get(t.tobytes(), lambda t=t: lqr_gain(t, self.plant))
            if not isinstance(val, InfeasibleParameters):
                gains[i], ok[i] = val, True
        return {"k": gains.reshape(batch + (2,))}, ok.reshape(batch)

    def act(self, x, ref, z, params):
        xe = self.regulated(x, ref)
        u = np.sum(params["k"] * xe, axis=-1)
        return u[..., None], z

    def closed_loop_matrix(self, theta):
        return self.plant.A + self.plant.B @ self.gain(theta)[None, :]


class PIDController(_DoubleIntegratorController):
    name = "pid"
    n_z = 3

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["pid"], plant)

    def act(self, x, ref, z, params):
        e = np.asarray(x, dtype=float)[..., 0] - np.asarray(ref, dtype=float)[..., 0]
        u, z_next = pid_control(e, z, params["theta"])
        return u[..., None], z_next

    def closed_loop_matrix(self, theta):
        a, b, c = pid_weights(_check_len(theta, 3))
        Ts = self.plant.Ts
        # augmented state (e, v, u_prev, e_prev, e_prev2)
        return np.array(
            [
                [1.0, Ts, 0.0, 0.0, 0.0],
                [Ts * a, 1.0, Ts, Ts * b, Ts * c],
                [a, 0.0, 1.0, b, c],
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0, 0.0],
            ]
        )

    def augmented_state(self, x, ref, z):
        return np.concatenate([self.regulated(x, ref), np.asarray(z, dtype=float)], axis=-1)


class SlidingModeController(_DoubleIntegratorController):
    name = "sliding_mode"

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["sliding_mode"], plant)

    def act(self, x, ref, z, params):
        xe = self.regulated(x, ref)
        u = sliding_mode_control(xe[..., 0], xe[..., 1], params["theta"])
        return u[..., None], z

    def augmented_state(self, x, ref, z):
        raise NotSupported("sliding mode control is nonlinear")


class OutputFeedbackController(_DoubleIntegratorController):
    name = "output_feedback"
    n_z = 2

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["output_feedback"], plant)

    def initial_state(self, x0, ref0):
        # observer starts at the true initial state
        return np.asarray(x0, dtype=float)[:2].copy()

    def act(self, x, ref, z, params):
        p_ref = np.asarray(ref, dtype=float)[..., 0]
        u, z_next = output_feedback_control(
            np.asarray(x, dtype=float)[..., 0], z, params["theta"], self.plant, p_ref
        )
        return u[..., None], z_next

    def closed_loop_matrix(self, theta):
        theta = _check_len(theta, 4)
        A, B = self.plant.A, self.plant.B
        F = theta[None, :2]
        Lc = np.array([[theta[2], 0.0], [theta[3], 0.0]])  # L @ C with C = [1, 0]
        # state (tracking error, observer error)
        top = np.hstack([A + B @ F, B @ F])
        bottom = np.hstack([np.zeros((2, 2)), A + Lc])
        return np.vstack([top, bottom])

    def augmented_state(self, x, ref, z):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.regulated(x, ref), np.asarray(z, dtype=float) - x[..., :2]], axis=-1)


class NeuralNetworkController(_DoubleIntegratorController):
    name = "neural_network"

    def __init__(self, plant=None):
        super().__init__(LAYOUTS["neural_network"], plant)

    def prepare(self, theta):
        theta = np.asarray(theta, dtype=float)
        params = self.layout.unpack(theta)
        # transposed copies so each layer is one batched row-vector product
        params["W_in_T"] = np.ascontiguousarray(np.swapaxes(params["W_in"], -1, -2))
        params["W_lay_T"] = np.ascontiguousarray(np.swapaxes(params["W_lay"], -1, -2))
        return params, np.all(np.isfinite(theta), axis=-1)

    def act(self, x, ref, z, params):
        xe = self.regulated(x, ref)
        h = leaky_relu((xe[..., None, :] @ params["W_in_T"])[..., 0, :] + params["b_in"])
        h = leaky_relu((h[..., None, :] @ params["W_lay_T"])[..., 0, :] + params["b_lay"])
        u = np.einsum("...i,...i->...", params["W_out"], h) + params["b_out"]
        return u[..., None], z

    def rollout_kernel(self, plant, params, x0, refs, noise, batch):
        if type(plant) is not DoubleIntegrator:
            return None
        from .kernels import mlp_double_integrator

        def flat(name):
            a = np.broadcast_to(params[name], batch + dict(self.layout.slots)[name])
            return np.ascontiguousarray(a.reshape((-1,) + dict(self.layout.slots)[name]))

        n = int(np.prod(batch, dtype=int))
        x0 = np.ascontiguousarray(np.broadcast_to(x0, batch + (2,)).reshape(n, 2))
        noise = np.zeros((refs.shape[0] - 1, 2)) if noise is None else np.ascontiguousarray(noise, dtype=float)
        states, inputs = mlp_double_integrator(
            flat("W_in"), flat("b_in"), flat("W_lay"), flat("b_lay"), flat("W_out"), flat("b_out"),
            x0, np.ascontiguousarray(refs), noise, float(plant.Ts), 0.1,
        )
        N = refs.shape[0] - 1
        return states.reshape(batch + (N + 1, 2)), inputs.reshape(batch + (N, 1))

    def augmented_state(self, x, ref, z):
        raise NotSupported("neural network control is nonlinear")


class HInfinityController(Controller):
    """Parameter layout only; loop-shaping synthesis is not provided."""

    name = "hinf"

    def __init__(self, plant=None):
        raise NotSupported("H-infinity synthesis is not implemented; only its 8-slot layout is registered")


# ---------------------------------------------------------------------------
# vehicle controllers; ref = (p_Y_ref, v_ref)


class _VehicleController(Controller):
    n_u = 2

    def __init__(self, layout, plant: Plant | None = None, k_speed: float = 0.5):
        super().__init__(layout)
        self.plant = plant or KinematicBicycle()
        self.k_speed = k_speed

    def speed_input(self, x, ref):
        return self.k_speed * (np.asarray(ref, dtype=float)[..., 1] - np.asarray(x, dtype=float)[..., 3])

    def regulated(self, x, ref):
        x = np.asarray(x, dtype=float)
        ref = np.asarray(ref, dtype=float)
        return np.stack([x[..., 1] - ref[..., 0], x[..., 2], x[..., 4]], axis=-1)


class LaneStateFeedbackController(_VehicleController):
    """Steering-rate feedback on ``(p_Y - p_Y_ref, psi, delta)``."""

    name = "lane_state_feedback"

    def __init__(self, plant=None, k_speed: float = 0.5):
        super().__init__(LAYOUTS["lane_state_feedback"], plant, k_speed)

    def act(self, x, ref, z, params):
        th = params["theta"]
        xe = self.regulated(x, ref)
        steer = np.sum(th * xe, axis=-1)
        return np.stack([self.speed_input(x, ref), steer], axis=-1), z


def lateral_model(plant: KinematicBicycle, v: float) -> tuple[np.ndarray, np.ndarray]:
    """Lateral Euler model linearized on the centerline at speed ``v``.

    State ``(p_Y, psi, delta)``, input ``delta_dot``.
    """
    Ts, L = plant.Ts, plant.wheelbase
    A = np.array([[1.0, Ts * v, Ts * v * plant.l_r / L], [0.0, 1.0, Ts * v / L], [0.0, 0.0, 1.0]])
    B = np.array([[0.0], [0.0], [Ts]])
    return A, B


class LaneOptimalController(_VehicleController):
    """Infinite-horizon LQR with cost ``theta_y p_Y^2 + theta_psi psi^2 + delta_dot^2``.

    Gains are computed on the lateral model linearized at the reference
    speed and cached per ``(theta, v_ref)``.
    """

    name = "lane_optimal"

    def __init__(self, plant=None, k_speed: float = 0.5):
        super().__init__(LAYOUTS["lane_optimal"], plant, k_speed)
        self._cache = _GainCache()

    def _gain(self, theta, v) -> np.ndarray:
        ty, tp = float(theta[0]), float(theta[1])
        if not (np.isfinite(ty) and np.isfinite(tp)) or ty < 0 or tp < 0:
            raise InfeasibleParameters("lane cost weights must be nonnegative")
        A, B = lateral_model(self.plant, v)
        try:
            _, K = dare_solve(A, B, np.diag([ty, tp, 0.0]), np.eye(1))
        except NoConvergence as exc:
            raise InfeasibleParameters(str(exc)) from None
        return -K[0]

    def prepare(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.layout.unpack(theta)
        ok = np.all(np.isfinite(theta), axis=-1) & np.all(theta >= 0, axis=-1)
        return {"theta": theta}, ok

    def act(self, x, ref, z, params):
        theta = params["theta"]
        ref = np.asarray(ref, dtype=float)
        batch = theta.shape[:-1]
        flat = theta.reshape(-1, 2)
        v_ref = np.broadcast_to(ref[..., 1], batch).reshape(-1)
        gains = np.zeros((flat.shape[0], 3))
        for i, (t, v) in enumerate(zip(flat, v_ref)):
            key = (t.tobytes(), float(v))
            val = self._cache.get(key, lambda t=t, v=v: self._gain(t, v))
            if not isinstance(val, InfeasibleParameters):
                gains[i] = val
        steer = np.sum(gains.reshape(batch + (3,)) * self.regulated(x, ref), axis=-1)
        return np.stack([self.speed_input(x, ref), steer], axis=-1), z


class BicycleOptimalController(_VehicleController):
    """Receding-horizon LQ controller on ``M (x - x_ref)``.

    ``Q = diag(exp(log_q))`` weights ``(p_Y, psi, v, delta)``, ``R =
    diag(exp(log_r))`` weights ``(v_dot, delta_dot)``, so every parameter
    vector yields positive definite weights. The model is linearized once at
    the centerline at speed ``v_lin``.
    """

    name = "bicycle_optimal"

    def __init__(self, plant=None, horizon: int = 20, v_lin: float = 10.0):
        super().__init__(LAYOUTS["bicycle_optimal"], plant)
        self.horizon = horizon
        self.v_lin = v_lin
        x_lin = np.array([0.0, 0.0, 0.0, v_lin, 0.0])
        u_lin = np.zeros(2)
        Ax = finite_diff_jacobian(lambda x: self.plant.step(x, u_lin), x_lin)
        Bu = finite_diff_jacobian(lambda u: self.plant.step(x_lin, u), u_lin)
        sel = [1, 2, 3, 4]
        self.A = Ax[np.ix_(sel, sel)]
        self.B = Bu[sel, :]
        self._cache = _GainCache()

    def regulated(self, x, ref):
        x = np.asarray(x, dtype=float)
        ref = np.asarray(ref, dtype=float)
        return np.stack([x[..., 1] - ref[..., 0], x[..., 2], x[..., 3] - ref[..., 1], x[..., 4]], axis=-1)

    def _gain(self, theta):
        with np.errstate(over="ignore"):
            w = np.exp(theta)
        if not np.all(np.isfinite(w)):
            raise InfeasibleParameters("weights overflow")
        try:
            K = finite_horizon_gain(self.A, self.B, np.diag(w[:4]), np.diag(w[4:]), self.horizon)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleParameters(str(exc)) from None
        if not np.all(np.isfinite(K)):
            raise InfeasibleParameters("non-finite gain")
        return -K

    def prepare(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.layout.unpack(theta)
        batch = theta.shape[:-1]
        flat = theta.reshape(-1, 6)
        gains = np.zeros((flat.shape[0], 2, 4))
        ok = np.zeros(flat.shape[0], dtype=bool)
        for i, t in enumerate(flat):
            val = self._cache.get(t.tobytes(), lambda t=t: self._gain(t))
            if not isinstance(val, InfeasibleParameters):
                gains[i], ok[i] = val, True
        return {"k": gains.reshape(batch + (2, 4))}, ok.reshape(batch)

    def act(self, x, ref, z, params):
        xe = self.regulated(x, ref)
        u = (params["k"] @ xe[..., None])[..., 0]
        return u, z


CONTROLLERS = {
    "state_feedback": StateFeedbackController,
    "optimal": LQRController,
    "pid": PIDController,
    "sliding_mode": SlidingModeController,
    "output_feedback": OutputFeedbackController,
    "neural_network": NeuralNetworkController,
    "hinf": HInfinityController,
    "lane_state_feedback": LaneStateFeedbackController,
    "lane_optimal": LaneOptimalController,
    "bicycle_optimal": BicycleOptimalController,
}


def make_controller(kind: str, plant: Plant | None = None, **options) -> Controller:
    try:
        cls = CONTROLLERS[kind]
    except KeyError:
        raise ValueError(f"unknown controller {kind!r}; choose from {sorted(CONTROLLERS)}") from None
    return cls(plant, **options)
