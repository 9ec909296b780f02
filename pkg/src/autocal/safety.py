"""Lyapunov-based acceptance test for parameter updates.

For linear closed loops each parameter vector gets the quadratic Lyapunov
function ``V(x) = x' M x`` with ``A' M A - M = -I``. An update is applied
only if the new closed loop is asymptotically stable, its ``M`` has
eigenvalues inside a fixed interval (uniform class-K bounds), and
``V_new(x_now) <= V_old(x_now)``. Along a run where every switch passes
this test, ``V_{theta_k}(x_k)`` decreases by at least ``|x_k|^2`` per step.

Controllers without a linear representation fall back to a nominal
rollout contraction test. When the current parameters fail that test too,
an update is accepted if its rollout ends no farther from the reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import Controller
from .errors import InfeasibleParameters, NotSupported, Unstable
from .numerics import spectral_radius, symmetrize
from .plants import Plant
from .simulation import rollout

OK = "ok"
LYAPUNOV_INCREASE = "lyapunov_increase"
UNSTABLE = "unstable_closed_loop"
INFEASIBLE = "infeasible"
REASONS = (OK, LYAPUNOV_INCREASE, UNSTABLE, INFEASIBLE)


@dataclass(frozen=True)
class QuadraticLyapunov:
    M: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.M, x)

    @property
    def eig_range(self) -> tuple[float, float]:
        ev = np.linalg.eigvalsh(self.M)
        return float(ev[0]), float(ev[-1])


@dataclass(frozen=True)
class SafetyVerdict:
    accepted: bool
    reason: str
    detail: str = ""

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.accepted != (self.reason == OK):
            raise ValueError("accepted must hold exactly when reason is ok")


def closed_loop_matrix(controller: Controller, theta) -> np.ndarray:
    """Autonomous closed-loop matrix; NotSupported for nonlinear laws."""
    return controller.closed_loop_matrix(np.asarray(theta, dtype=float))


def lyapunov_for(A_cl, residual_tol: float = 1e-9) -> QuadraticLyapunov:
    """Solve ``A' M A - M = -I`` via the Kronecker form.

    Raises Unstable when ``rho(A_cl) >= 1``.
    """
    A = np.atleast_2d(np.asarray(A_cl, dtype=float))
    n = A.shape[0]
    rho = spectral_radius(A)
    if not rho < 1.0:
        raise Unstable(f"closed loop has spectral radius {rho:.6g}")
    # vec(A' M A) = kron(A', A') vec(M) for row-major vec as well
    lhs = np.kron(A.T, A.T) - np.eye(n * n)
    M = np.linalg.solve(lhs, -np.eye(n).ravel()).reshape(n, n)
    M = symmetrize(M)
    res = np.max(np.abs(A.T @ M @ A - M + np.eye(n)))
    if res > residual_tol * max(1.0, np.max(np.abs(M))):
        raise Unstable(f"Lyapunov residual {res:.3g} too large; loop is near marginal")
    return QuadraticLyapunov(M)


@dataclass(frozen=True)
class SafetyConfig:
    enabled: bool = True
    eigen_interval: tuple[float, float] = (1e-3, 1e3)
    rollout_horizon: int = 200
    contraction: float = 0.5


class SafetyGate:
    """Decides whether ``theta_new`` may replace ``theta_old`` at ``x_now``."""

    def __init__(self, controller: Controller, model: Plant, config: SafetyConfig | None = None):
        self.controller = controller
        self.model = model
        self.config = config or SafetyConfig()
        self._lyap: dict[bytes, QuadraticLyapunov | Exception] = {}

    def certificate(self, theta) -> QuadraticLyapunov:
        """``V_theta``, cached; raises Unstable, InfeasibleParameters or NotSupported."""
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key not in self._lyap:
            try:
                val = lyapunov_for(closed_loop_matrix(self.controller, theta))
            except (Unstable, InfeasibleParameters, NotSupported) as exc:
                val = exc
            if len(self._lyap) > 4096:
                self._lyap.clear()
            self._lyap[key] = val
        val = self._lyap[key]
        if isinstance(val, Exception):
            raise val
        return val

    def _check_linear(self, theta_old, theta_new, s_now) -> SafetyVerdict:
        lo, hi = self.config.eigen_interval
        try:
            V_new = self.certificate(theta_new)
        except InfeasibleParameters as exc:
            return SafetyVerdict(False, INFEASIBLE, str(exc))
        except Unstable as exc:
            return SafetyVerdict(False, UNSTABLE, str(exc))
        e_min, e_max = V_new.eig_range
        if e_min < lo or e_max > hi:
            return SafetyVerdict(False, UNSTABLE, f"certificate eigenvalues [{e_min:.3g}, {e_max:.3g}] outside [{lo}, {hi}]")
        try:
            V_old = self.certificate(theta_old)
        except (Unstable, InfeasibleParameters):
            # no certificate for the current loop: condition (i) alone decides
            return SafetyVerdict(True, OK, "current parameters uncertified")
        v_new, v_old = float(V_new(s_now)), float(V_old(s_now))
        if v_new <= v_old:
            return SafetyVerdict(True, OK)
        return SafetyVerdict(False, LYAPUNOV_INCREASE, f"V_new={v_new:.6g} > V_old={v_old:.6g}")

    def _rollout_error(self, theta, x_now, z_now, ref_now) -> tuple[float, float] | None:
        """Regulated error norms at the start and end of the nominal rollout; None if it fails."""
        params, ok = self.controller.prepare(np.asarray(theta, dtype=float))
        if not np.all(ok):
            return None
        H = self.config.rollout_horizon
        refs = np.broadcast_to(np.atleast_1d(np.asarray(ref_now, dtype=float)), (H + 1, np.size(ref_now)))
        trace, diverged = rollout(self.model, self.controller, params, x_now, z_now, refs)
        if np.any(diverged):
            return None
        e0 = np.linalg.norm(self.controller.regulated(trace.states[0], refs[0]))
        eH = np.linalg.norm(self.controller.regulated(trace.states[-1], refs[-1]))
        return float(e0), float(eH)

    def _check_rollout(self, theta_old, theta_new, x_now, z_now, ref_now) -> SafetyVerdict:
        _, ok = self.controller.prepare(np.asarray(theta_new, dtype=float))
        if not np.all(ok):
            return SafetyVerdict(False, INFEASIBLE, "controller rejected parameters")
        new = self._rollout_error(theta_new, x_now, z_now, ref_now)
        if new is None:
            return SafetyVerdict(False, UNSTABLE, "nominal rollout diverged")
        e0, eH = new
        if not eH <= self.config.contraction * e0:
            # current loop fails the same test: accept anything no worse
            old = self._rollout_error(theta_old, x_now, z_now, ref_now)
            if old is None or (old[1] > self.config.contraction * old[0] and eH <= old[1]):
                return SafetyVerdict(True, OK, "current parameters uncertified")
            return SafetyVerdict(False, UNSTABLE, f"rollout contracted {e0:.3g} -> {eH:.3g}")
        # the surrogate V(x) = |x|^2 does not depend on theta, so the
        # decrease condition at x_now holds with equality
        return SafetyVerdict(True, OK, "rollout")

    def check(self, theta_old, theta_new, x_now, z_now=(), ref_now=(0.0,)) -> SafetyVerdict:
        theta_old = np.asarray(theta_old, dtype=float)
        theta_new = np.asarray(theta_new, dtype=float)
        if np.array_equal(theta_old, theta_new):
            return SafetyVerdict(True, OK, "unchanged")
        if not np.all(np.isfinite(theta_new)):
            return SafetyVerdict(False, INFEASIBLE, "non-finite parameters")
        try:
            s_now = self.controller.augmented_state(x_now, np.atleast_1d(np.asarray(ref_now, dtype=float)), z_now)
            self.controller.closed_loop_matrix(theta_new)
        except NotSupported:
            return self._check_rollout(theta_old, theta_new, x_now, z_now, ref_now)
        except InfeasibleParameters as exc:
            return SafetyVerdict(False, INFEASIBLE, str(exc))
        return self._check_linear(theta_old, theta_new, s_now)


def safety_gate(theta_old, theta_new, x_now, context: SafetyGate, z_now=(), ref_now=(0.0,)) -> SafetyVerdict:
    return context.check(theta_old, theta_new, x_now, z_now, ref_now)
