from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autocal.controllers import (
    LQRController,
    NeuralNetworkController,
    OutputFeedbackController,
    SlidingModeController,
    StateFeedbackController,
)
from autocal.errors import NotSupported, Unstable
from autocal.numerics import spectral_radius_power
from autocal.plants import DoubleIntegrator
from autocal.safety import (
    INFEASIBLE,
    LYAPUNOV_INCREASE,
    OK,
    UNSTABLE,
    QuadraticLyapunov,
    SafetyConfig,
    SafetyGate,
    SafetyVerdict,
    closed_loop_matrix,
    lyapunov_for,
    safety_gate,
)

DI = DoubleIntegrator()


def test_closed_loop_examples():
    sf = StateFeedbackController()
    A = closed_loop_matrix(sf, [0.0, 0.0])
    np.testing.assert_array_equal(A, DI.A)
    with pytest.raises(Unstable):
        lyapunov_for(A)
    A = closed_loop_matrix(sf, [-1.0, -1.5])
    assert spectral_radius_power(A) < 1
    assert closed_loop_matrix(OutputFeedbackController(), [-1.0, -1.5, -0.5, -0.3]).shape == (4, 4)
    with pytest.raises(NotSupported):
        closed_loop_matrix(SlidingModeController(), [1.0, 1.0])


def test_lyapunov_examples():
    np.testing.assert_allclose(lyapunov_for(np.zeros((2, 2))).M, np.eye(2))
    assert lyapunov_for([[0.5]]).M[0, 0] == pytest.approx(4.0 / 3.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_lyapunov_residual_and_decrease(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.95 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-3)
    V = lyapunov_for(A)
    assert np.max(np.abs(A.T @ V.M @ A - V.M + np.eye(n))) <= 1e-9
    assert V.eig_range[0] > 0
    x = rng.normal(size=n)
    for _ in range(30):
        x_next = A @ x
        assert V(x_next) == pytest.approx(V(x) - x @ x, rel=1e-9, abs=1e-12)
        x = x_next


def test_verdict_invariant():
    with pytest.raises(ValueError):
        SafetyVerdict(True, UNSTABLE)
    with pytest.raises(ValueError):
        SafetyVerdict(False, OK)


def test_gate_examples():
    gate = SafetyGate(StateFeedbackController(), DI)
    stable = np.array([-1.0, -1.5])
    assert gate.check(stable, stable, [3.0, 1.0]).reason == OK
    v = gate.check(stable, [-0.5, -1.0], [0.0, 0.0])
    assert v.accepted
    v = gate.check(stable, [1.0, 0.0], [0.1, 0.0])
    assert (v.accepted, v.reason) == (False, UNSTABLE)
    v = safety_gate(stable, [0.0, 0.0], [0.1, 0.0], gate)
    assert v.reason == UNSTABLE


def test_gate_lyapunov_condition():
    sf = StateFeedbackController()
    gate = SafetyGate(sf, DI)
    a, b = np.array([-1.0, -1.5]), np.array([-1.5, -3.0])
    Va, Vb = gate.certificate(a), gate.certificate(b)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        x = rng.normal(size=2)
        v = gate.check(a, b, x)
        assert v.accepted == (Vb(x) <= Va(x))
        seen.add(v.reason)
    assert seen == {OK, LYAPUNOV_INCREASE}


def test_gate_eigen_interval_and_infeasible():
    sf = StateFeedbackController()
    gate = SafetyGate(sf, DI, SafetyConfig(eigen_interval=(1e-3, 5.0)))
    v = gate.check([-1.0, -1.5], [-0.05, -0.3], [0.0, 0.0])
    assert v.reason == UNSTABLE and "eigenvalues" in v.detail
    lqr = SafetyGate(LQRController(), DI)
    v = lqr.check([1.0, 0.0, 1.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.1, 0.0])
    assert v.reason == INFEASIBLE
    v = lqr.check([1.0, 0.0, 1.0, 1.0], [1.0, 0.0, 1.0, np.nan], [0.1, 0.0])
    assert v.reason == INFEASIBLE


def test_gate_uncertified_current_parameters():
    gate = SafetyGate(StateFeedbackController(), DI)
    v = gate.check([0.0, 0.0], [-1.0, -1.5], [5.0, 5.0])
    assert v.accepted


def test_rollout_fallback():
    gate = SafetyGate(SlidingModeController(), DI)
    assert gate.check([1.0, 0.5], [1.0, 1.0], [1.0, 0.0], ref_now=[0.0]).accepted
    v = gate.check([1.0, 0.5], [-1.0, -1.0], [1.0, 0.0], ref_now=[0.0])
    assert v.reason == UNSTABLE
    nn = SafetyGate(NeuralNetworkController(), DI)
    assert nn.check(np.zeros(151), np.full(151, 0.5), [1.0, 0.0]).reason == UNSTABLE


def test_rollout_fallback_uncertified_current_parameters():
    # theta = 0 leaves x = (1, 0) at rest, so the current loop fails contraction
    gate = SafetyGate(SlidingModeController(), DI)
    v = gate.check([0.0, 0.0], [-0.1, 0.0], [1.0, 0.0], ref_now=[0.0])
    assert v.accepted and v.detail == "current parameters uncertified"
    # a switching gain with the wrong sign drives the error up: still rejected
    assert gate.check([0.0, 0.0], [0.0, -0.01], [1.0, 0.0], ref_now=[0.0]).reason == UNSTABLE


def test_switching_sequence_decreases():
    # every accepted switch keeps V_theta_k(x_k) strictly decreasing
    sf = StateFeedbackController()
    gate = SafetyGate(sf, DI)
    rng = np.random.default_rng(4)
    theta = np.array([-1.0, -1.5])
    x = np.array([2.0, -1.0])
    values = [float(gate.certificate(theta)(x))]
    for _ in range(200):
        u, _ = sf.control(x, np.array([0.0]), np.zeros(0), theta)
        x = DI.step(x, u)
        prop = theta + 0.3 * rng.normal(size=2)
        if gate.check(theta, prop, x).accepted:
            theta = prop
        values.append(float(gate.certificate(theta)(x)))
        if np.linalg.norm(x) < 1e-6:
            break
    assert np.all(np.diff(values) < 0)


def test_quadratic_lyapunov_batch():
    V = QuadraticLyapunov(np.diag([1.0, 2.0]))
    np.testing.assert_allclose(V(np.array([[1.0, 1.0], [0.0, 2.0]])), [3.0, 8.0])
