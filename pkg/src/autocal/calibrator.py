"""Kalman-filter recursions that treat controller parameters as the state.

The measurement model is the window replay ``h(theta)``: re-simulate the
closed loop from the window's initial plant and controller states under a
candidate ``theta`` while injecting the recorded process noise, then
evaluate the specification function r on the replayed trace. The filters compare
``h`` against the target ``y`` and correct the parameter belief.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .controllers import Controller
from .errors import DimensionMismatch, NotPositiveDefinite, SingularInnovation, WindowTooShort
from .numerics import cho_solve, cholesky_lower, finite_diff_jacobian, repair_pd, symmetrize
from .objectives import Specification, Trace
from .plants import Plant, recover_process_noise
from .simulation import rollout

DEFAULT_PENALTY = 1e3


@dataclass(frozen=True)
class CalibratorBelief:
    """Gaussian belief over parameters plus the filter's noise settings."""

    theta: np.ndarray
    P: np.ndarray
    C_theta: np.ndarray
    w0: float = 1.0 / 3.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        L = theta.size
        P = np.asarray(self.P, dtype=float)
        C = np.asarray(self.C_theta, dtype=float)
        if P.shape != (L, L) or C.shape != (L, L):
            raise DimensionMismatch(f"belief of size {L} with P {P.shape} and C_theta {C.shape}")
        if not -1.0 < self.w0 < 1.0:
            raise ValueError(f"w0 must lie in (-1, 1), got {self.w0}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P)) and np.all(np.isfinite(C))):
            raise ValueError("belief has non-finite entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "P", symmetrize(P))
        object.__setattr__(self, "C_theta", symmetrize(C))

    @property
    def L(self) -> int:
        return self.theta.size

    @classmethod
    def initial(cls, theta0, p0_scale=1.0, c_scale=1.0, w0: float = 1.0 / 3.0):
        """Diagonal prior; each scale is a scalar or one entry per parameter."""
        theta0 = np.asarray(theta0, dtype=float).ravel()
        n = theta0.size
        p0 = np.broadcast_to(np.asarray(p0_scale, dtype=float), (n,))
        c = np.broadcast_to(np.asarray(c_scale, dtype=float), (n,))
        return cls(theta0, np.diag(p0), np.diag(c), w0)

    def with_theta(self, theta) -> "CalibratorBelief":
        return replace(self, theta=np.asarray(theta, dtype=float))


def sigma_points(belief: CalibratorBelief) -> tuple[np.ndarray, np.ndarray]:
    """``2L + 1`` points ``theta, theta +- sqrt(L / (1 - w0)) A[:, i]`` and weights.

    ``A`` is the lower Cholesky factor of ``P`` (repaired with jitter if
    needed). Raises NotPositiveDefinite if repair fails.
    """
    L, w0 = belief.L, belief.w0
    _, A = repair_pd(belief.P)
    spread = np.sqrt(L / (1.0 - w0))
    cols = spread * A.T  # row i is spread * A[:, i]
    pts = np.concatenate([belief.theta[None, :], belief.theta + cols, belief.theta - cols])
    weights = np.full(2 * L + 1, (1.0 - w0) / (2.0 * L))
    weights[0] = w0
    return pts, weights


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class ReplayWindow:
    """Everything needed to re-simulate the last ``N`` transitions.

    ``W`` is the recovered noise on the replay model's state; ``refs`` holds
    ``N + 1`` reference samples. The logged states and inputs are kept for
    diagnostics and for the replay identity check.
    """

    x0: np.ndarray
    z0: np.ndarray
    W: np.ndarray
    refs: np.ndarray
    states: np.ndarray | None = None
    inputs: np.ndarray | None = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        refs = np.asarray(self.refs, dtype=float)
        if refs.ndim == 1:
            refs = refs[:, None]
        x0 = np.asarray(self.x0, dtype=float)
        if W.shape[0] < 1:
            raise WindowTooShort("a window needs at least one transition")
        if W.shape[1] != x0.size or refs.shape[0] != W.shape[0] + 1:
            raise DimensionMismatch(
                f"window: x0 {x0.shape}, W {W.shape}, refs {refs.shape} are inconsistent"
            )
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "refs", refs)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float))

    @property
    def N(self) -> int:
        return self.W.shape[0]

    def logged_trace(self) -> Trace:
        if self.states is None or self.inputs is None:
            raise ValueError("window carries no logged trace")
        return Trace(self.states, self.inputs, self.refs, self.z0)


@dataclass
class _Transition:
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    z: np.ndarray
    ref: np.ndarray
    ref_next: np.ndarray
    w: np.ndarray


@dataclass
class WindowBuffer:
    """FIFO of the last ``N`` closed-loop transitions."""

    model: Plant
    N: int
    _items: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("window length must be at least 1")
        self._items = deque(maxlen=self.N)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) == self.N

    def push_sample(self, x, u, x_next, z=(), ref=(0.0,), ref_next=None) -> np.ndarray:
        """Record ``(x_k, u_k) -> x_{k+1}``; returns the recovered ``w_k``."""
        x = np.asarray(x, dtype=float)
        x_next = np.asarray(x_next, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        ref = np.atleast_1d(np.asarray(ref, dtype=float))
        ref_next = ref if ref_next is None else np.atleast_1d(np.asarray(ref_next, dtype=float))
        w = recover_process_noise(self.model, x_next, x, u)
        self._items.append(_Transition(x, u, x_next, np.asarray(z, dtype=float), ref, ref_next, w))
        return w

    def window(self) -> ReplayWindow:
        if not self.full:
            raise WindowTooShort(f"buffer holds {len(self._items)} of {self.N} transitions")
        items = list(self._items)
        states = np.stack([t.x for t in items] + [items[-1].x_next])
        refs = np.stack([t.ref for t in items] + [items[-1].ref_next])
        return ReplayWindow(
            x0=items[0].x,
            z0=items[0].z,
            W=np.stack([t.w for t in items]),
            refs=refs,
            states=states,
            inputs=np.stack([t.u for t in items]),
        )


# ---------------------------------------------------------------------------
# measurement model


class Replay:
    """Batched ``h(theta)`` for one window.

    Infeasible parameters and diverged replays map to the sentinel
    ``y + penalty`` so every sigma point has a finite, bounded image.
    """

    def __init__(
        self,
        window: ReplayWindow,
        controller: Controller,
        model: Plant,
        spec: Specification,
        penalty: float = DEFAULT_PENALTY,
    ):
        if model.n_full != model.n_x:
            raise DimensionMismatch("replay model must expose its full state")
        self.window = window
        self.controller = controller
        self.model = model
        self.spec = spec
        self.penalty = float(penalty)
        N = window.N
        dummy = Trace(np.zeros((N + 1, model.n_x)), np.zeros((N, controller.n_u)), window.refs)
        self.y = spec.y(dummy)
        self.C_v = spec.C_v()
        self.last_penalized = 0

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        batch = theta.shape[:-1]
        params, ok = self.controller.prepare(theta)
        w = self.window
        trace, diverged = rollout(self.model, self.controller, params, w.x0, w.z0, w.refs, w.W, batch)
        r = self.spec.r(trace)
        with np.errstate(invalid="ignore"):
            bad = ~ok | diverged | ~np.all(np.isfinite(r), axis=-1)
            bad |= np.any(np.abs(r - self.y) > self.penalty, axis=-1)
        if np.any(bad):
            r = np.where(bad[..., None], self.y + self.penalty, r)
        self.last_penalized = int(np.sum(bad))
        return r


def replay_h(window, controller, plant, spec, theta, penalty: float = DEFAULT_PENALTY) -> np.ndarray:
    return Replay(window, controller, plant, spec, penalty)(theta)


# ---------------------------------------------------------------------------
# filter updates


@dataclass(frozen=True)
class UpdateResult:
    delta: np.ndarray
    belief: CalibratorBelief  # theta + delta and the posterior covariance
    y_pred: np.ndarray
    gain: np.ndarray


def _factor_innovation(S):
    try:
        return cholesky_lower(symmetrize(S))
    except NotPositiveDefinite as exc:
        raise SingularInnovation(f"innovation covariance not invertible: {exc}") from None


def _finish(belief, delta, P_post, y_pred, K) -> UpdateResult:
    P_post, _ = repair_pd(P_post)
    return UpdateResult(delta, replace(belief, theta=belief.theta + delta, P=P_post), y_pred, K)


def ukf_step(belief: CalibratorBelief, h: Callable, y, C_v) -> UpdateResult:
    """One unscented update with batched measurement model ``h``."""
    y = np.asarray(y, dtype=float)
    C_v = np.atleast_2d(np.asarray(C_v, dtype=float))
    pts, w = sigma_points(belief)
    Y = np.asarray(h(pts), dtype=float)
    if Y.shape != (pts.shape[0], y.size):
        raise DimensionMismatch(f"h returned {Y.shape}, expected {(pts.shape[0], y.size)}")
    y_hat = w @ Y
    dY = Y - y_hat
    dT = pts - belief.theta
    S = C_v + (dY * w[:, None]).T @ dY
    C_sz = (dT * w[:, None]).T @ dY
    chol = _factor_innovation(S)
    K = cho_solve(chol, C_sz.T).T
    P_pred = belief.C_theta + (dT * w[:, None]).T @ dT
    # K S K' = K C_sz' since K = C_sz S^-1
    P_post = symmetrize(P_pred - K @ C_sz.T)
    delta = K @ (y - y_hat)
    return _finish(belief, delta, P_post, y_hat, K)


def ekf_step(belief: CalibratorBelief, h: Callable, y, C_v, eps: float = 1e-5, jacobian=None) -> UpdateResult:
    """One extended update; ``H`` by central differences unless ``jacobian`` is given."""
    y = np.asarray(y, dtype=float)
    C_v = np.atleast_2d(np.asarray(C_v, dtype=float))
    theta = belief.theta
    if jacobian is None:
        n = theta.size
        steps = eps * np.eye(n)
        pts = np.concatenate([theta[None, :], theta + steps, theta - steps])
        vals = np.asarray(h(pts), dtype=float)
        y_pred = vals[0]
        H = finite_diff_jacobian(lambda _: vals[1:], theta, eps, vectorized=True)
    else:
        y_pred = np.asarray(h(theta[None, :]), dtype=float)[0]
        H = np.asarray(jacobian(theta), dtype=float)
    if H.shape != (y.size, theta.size):
        raise DimensionMismatch(f"Jacobian has shape {H.shape}, expected {(y.size, theta.size)}")
    P_pred = belief.P + belief.C_theta
    S = H @ P_pred @ H.T + C_v
    chol = _factor_innovation(S)
    K = cho_solve(chol, H @ P_pred).T
    P_post = symmetrize((np.eye(theta.size) - K @ H) @ P_pred)
    delta = K @ (y - y_pred)
    return _finish(belief, delta, P_post, y_pred, K)


def ukf_update(belief, window, controller, plant, spec, penalty: float = DEFAULT_PENALTY):
    """UKF on a window replay; returns ``(delta, belief_with_theta_plus_delta)``."""
    h = Replay(window, controller, plant, spec, penalty)
    res = ukf_step(belief, h, h.y, h.C_v)
    return res.delta, res.belief


def ekf_update(belief, window, controller, plant, spec, penalty: float = DEFAULT_PENALTY, eps: float = 1e-5):
    h = Replay(window, controller, plant, spec, penalty)
    res = ekf_step(belief, h, h.y, h.C_v, eps)
    return res.delta, res.belief


FILTERS = {"ukf": ukf_step, "ekf": ekf_step}
