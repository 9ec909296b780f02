"""Discrete-time plant models ``x_{k+1} = f(x_k, u_k) + w_k``.

All ``step`` methods accept arrays with arbitrary leading batch axes, so a
whole set of sigma-point replays advances in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteState


class Plant:
    """Interface shared by all plants.

    ``n_x`` is the dimension of the measured state that controllers, logs
    and replays see. A plant with hidden dynamics (the mismatch plant) keeps
    a larger internal state and exposes ``lift``/``measure`` to move between
    the two.
    """

    name = "plant"
    n_x = 0
    n_u = 0
    n_full = 0
    Ts = 0.1
    divergence_bound = np.inf
    # indices checked against divergence_bound
    monitored: tuple[int, ...] = ()

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, x, u, w=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1] != self.n_full or u.shape[-1] != self.n_u:
            raise DimensionMismatch(
                f"{self.name}: expected state/input sizes {self.n_full}/{self.n_u}, "
                f"got {x.shape[-1]}/{u.shape[-1]}"
            )
        x_next = self.f(x, u)
        if w is not None:
            x_next = x_next + w
        return x_next

    def lift(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()

    def measure(self, x_full) -> np.ndarray:
        return np.asarray(x_full, dtype=float)

    def disturbance_vector(self, delta) -> np.ndarray:
        """Additive state disturbance produced by a scalar disturbance sample."""
        raise NotImplementedError

    def is_diverged(self, x) -> np.ndarray:
        """Per-sample divergence flag over the trailing state axis."""
        x = np.asarray(x, dtype=float)
        bad = ~np.all(np.isfinite(x), axis=-1)
        if self.monitored and np.isfinite(self.divergence_bound):
            with np.errstate(invalid="ignore"):
                big = np.any(np.abs(x[..., list(self.monitored)]) > self.divergence_bound, axis=-1)
            bad = bad | big
        return bad


def step(plant: Plant, x, u, w=None, check: bool = True) -> np.ndarray:
    """Advance ``plant`` one sample; raise NonFiniteState on divergence."""
    x_next = plant.step(x, u, w)
    if check and np.any(plant.is_diverged(x_next)):
        raise NonFiniteState(f"{plant.name} state diverged: {x_next}")
    return x_next


def recover_process_noise(plant: Plant, x_next, x, u) -> np.ndarray:
    """Realized ``w = x_next - f(x, u)`` on the plant's measured state."""
    x_next = np.asarray(x_next, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_next.shape != x.shape or x.shape[-1] != plant.n_x:
        raise DimensionMismatch(f"state shapes {x.shape} and {x_next.shape} do not match {plant.name}")
    return x_next - plant.step(x, u)


@dataclass
class DoubleIntegrator(Plant):
    """Position/velocity point mass, ``x = (p, v)``, input acceleration."""

    Ts: float = 0.1
    divergence_bound: float = 1e3

    name = "double_integrator"
    n_x = 2
    n_u = 1
    n_full = 2
    monitored = (0, 1)

    def __post_init__(self):
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")

    @property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.Ts], [0.0, 1.0]])

    @property
    def B(self) -> np.ndarray:
        return np.array([[0.0], [self.Ts]])

    def f(self, x, u):
        shape = x.shape if x.shape[:-1] == u.shape[:-1] else np.broadcast_shapes(x.shape, u.shape[:-1] + (2,))
        out = np.empty(shape)
        out[..., 0] = x[..., 0] + self.Ts * x[..., 1]
        out[..., 1] = x[..., 1] + self.Ts * u[..., 0]
        return out

    def disturbance_vector(self, delta):
        delta = np.asarray(delta, dtype=float)
        return np.stack([np.zeros_like(delta), self.Ts * delta], axis=-1)


@dataclass
class KinematicBicycle(Plant):
    """Kinematic single-track model, explicit Euler at ``Ts``.

    State ``(p_X, p_Y, psi, v, delta)``, input ``(v_dot, delta_dot)``.
    """

    Ts: float = 0.25
    l_f: float = 1.3
    l_r: float = 1.3
    divergence_bound: float = 1e3

    name = "kinematic_bicycle"
    n_x = 5
    n_u = 2
    n_full = 5
    monitored = (1, 2, 4)

    def __post_init__(self):
        if not (self.l_f > 0 and self.l_r > 0 and self.Ts > 0):
            raise ValueError("l_f, l_r and Ts must be positive")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def rates(self, x, u):
        psi, v, delta = x[..., 2], x[..., 3], x[..., 4]
        L = self.wheelbase
        with np.errstate(all="ignore"):
            tan_d = np.tan(delta)
            beta = np.arctan(self.l_r * tan_d / L)
            cb = np.cos(beta)
            return np.stack(
                [
                    v * np.cos(psi + beta) / cb,
                    v * np.sin(psi + beta) / cb,
                    v * tan_d / L,
                    u[..., 0],
                    u[..., 1],
                ],
                axis=-1,
            )

    def f(self, x, u):
        return x + self.Ts * self.rates(x, u)

    def disturbance_vector(self, delta):
        # lateral drift: enters p_Y as a velocity
        delta = np.asarray(delta, dtype=float)
        out = np.zeros(delta.shape + (5,))
        out[..., 1] = self.Ts * delta
        return out


@dataclass
class DynamicBicycleMismatch(Plant):
    """Linear-tire dynamic single-track vehicle used as the "true" system.

    Internal state ``(p_X, p_Y, psi, v_x, delta, v_y, r)``; the measured state
    is the first five entries, matching the kinematic model. Integrated with
    ``substeps`` explicit Euler steps per sample.
    """

    Ts: float = 0.1
    mass: float = 1134.0
    yaw_inertia: float = 1343.1
    l_f: float = 1.04
    l_r: float = 1.56
    c_f: float = 60000.0
    c_r: float = 70000.0
    substeps: int = 20
    divergence_bound: float = 1e3

    name = "dynamic_bicycle"
    n_x = 5
    n_u = 2
    n_full = 7
    monitored = (1, 2, 4, 5, 6)

    def __post_init__(self):
        for k in ("Ts", "mass", "yaw_inertia", "l_f", "l_r", "c_f", "c_r"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    def rates(self, s, u):
        psi, vx, delta, vy, r = s[..., 2], s[..., 3], s[..., 4], s[..., 5], s[..., 6]
        vx_safe = np.maximum(vx, 0.5)
        alpha_f = delta - (vy + self.l_f * r) / vx_safe
        alpha_r = -(vy - self.l_r * r) / vx_safe
        F_f = self.c_f * alpha_f
        F_r = self.c_r * alpha_r
        return np.stack(
            [
                vx * np.cos(psi) - vy * np.sin(psi),
                vx * np.sin(psi) + vy * np.cos(psi),
                r,
                u[..., 0],
                u[..., 1],
                (F_f * np.cos(delta) + F_r) / self.mass - vx * r,
                (self.l_f * F_f * np.cos(delta) - self.l_r * F_r) / self.yaw_inertia,
            ],
            axis=-1,
        )

    def f(self, s, u):
        h = self.Ts / self.substeps
        with np.errstate(all="ignore"):
            for _ in range(self.substeps):
                s = s + h * self.rates(s, u)
        return s

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x, np.zeros(x.shape[:-1] + (2,))], axis=-1)

    def measure(self, x_full):
        return np.asarray(x_full, dtype=float)[..., :5]

    def disturbance_vector(self, delta):
        delta = np.asarray(delta, dtype=float)
        out = np.zeros(delta.shape + (7,))
        out[..., 1] = self.Ts * delta
        return out


@dataclass
class DisturbanceModel:
    """Scalar disturbance sequence: none, constant or i.i.d. Gaussian."""

    kind: str = "none"
    value: float = 0.0
    std: float = 0.0
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("none", "constant", "gaussian"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.std < 0:
            raise ValueError("std must be nonnegative")

    def sample(self, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.rng is None:
            raise ValueError("gaussian disturbance needs an rng")
        return self.rng.normal(0.0, self.std, size=n)


PLANTS = {
    "double_integrator": DoubleIntegrator,
    "kinematic_bicycle": KinematicBicycle,
    "dynamic_bicycle": DynamicBicycleMismatch,
}


def make_plant(kind: str, **params) -> Plant:
    try:
        cls = PLANTS[kind]
    except KeyError:
        raise ValueError(f"unknown plant {kind!r}; choose from {sorted(PLANTS)}") from None
    return cls(**params)
