from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autocal.calibrator import (
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
from autocal.controllers import LQRController, StateFeedbackController
from autocal.errors import DimensionMismatch, SingularInnovation, WindowTooShort
from autocal.objectives import tracking_spec
from autocal.plants import DoubleIntegrator
from autocal.simulation import rollout

DI = DoubleIntegrator()


def linear_problem(rng, L=None, m=None):
    L = L or int(rng.integers(1, 6))
    m = m or int(rng.integers(1, 9))
    H = rng.normal(size=(m, L))
    b = rng.normal(size=m)
    G = rng.normal(size=(L, L))
    P = G @ G.T + 0.1 * np.eye(L)
    Gc = rng.normal(size=(L, L))
    C = 0.5 * Gc @ Gc.T
    Gv = rng.normal(size=(m, m))
    Cv = Gv @ Gv.T + 0.5 * np.eye(m)
    theta = rng.normal(size=L)
    y = rng.normal(size=m)
    return H, b, P, C, Cv, theta, y


def kf_predict_update(theta, P, C, H, b, Cv, y):
    P_pred = P + C
    S = H @ P_pred @ H.T + Cv
    K = np.linalg.solve(S, H @ P_pred).T
    return theta + K @ (y - H @ theta - b), (np.eye(len(theta)) - K @ H) @ P_pred


def kf_update_then_inflate(theta, P, C, H, b, Cv, y):
    S = H @ P @ H.T + Cv
    K = np.linalg.solve(S, H @ P).T
    return theta + K @ (y - H @ theta - b), P - K @ S @ K.T + C


def test_sigma_point_examples():
    pts, w = sigma_points(CalibratorBelief([2.0], [[1.0]], [[0.0]], w0=0.0))
    np.testing.assert_allclose(pts[:, 0], [2.0, 3.0, 1.0])
    np.testing.assert_allclose(w, [0.0, 0.5, 0.5])
    pts, w = sigma_points(CalibratorBelief([0.0, 0.0], np.eye(2), np.eye(2), w0=0.5))
    np.testing.assert_allclose(pts[1:3], 2.0 * np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.floats(-0.9, 0.9))
def test_sigma_points_reproduce_mean_and_covariance(seed, L, w0):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(L, L))
    P = G @ G.T + 0.1 * np.eye(L)
    b = CalibratorBelief(rng.normal(size=L), P, np.eye(L), w0)
    pts, w = sigma_points(b)
    assert pts.shape == (2 * L + 1, L)
    assert np.sum(w) == pytest.approx(1.0)
    np.testing.assert_allclose(w @ pts, b.theta, atol=1e-10)
    d = pts - b.theta
    np.testing.assert_allclose((d * w[:, None]).T @ d, P, atol=1e-10)


def test_belief_validation():
    with pytest.raises(ValueError):
        CalibratorBelief([0.0], [[1.0]], [[1.0]], w0=1.0)
    with pytest.raises(DimensionMismatch):
        CalibratorBelief([0.0, 1.0], [[1.0]], [[1.0]])
    b = CalibratorBelief.initial([1.0, 2.0], p0_scale=[1.0, 0.5], c_scale=0.1)
    np.testing.assert_array_equal(b.P, np.diag([1.0, 0.5]))
    np.testing.assert_array_equal(b.C_theta, 0.1 * np.eye(2))


def test_ekf_scalar_example():
    b = CalibratorBelief([0.0], [[1.0]], [[0.0]])
    res = ekf_step(b, lambda th: th.copy(), np.array([1.0]), np.eye(1), jacobian=lambda th: np.eye(1))
    assert res.delta[0] == pytest.approx(0.5)
    assert res.belief.P[0, 0] == pytest.approx(0.5)
    # finite-difference Jacobian gives the same answer
    res = ekf_step(b, lambda th: th.copy(), np.array([1.0]), np.eye(1))
    assert res.delta[0] == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_filters_match_linear_kalman_filter(seed):
    rng = np.random.default_rng(seed)
    H, b, P, C, Cv, theta, y = linear_problem(rng)
    h = lambda th: th @ H.T + b  # noqa: E731
    belief = CalibratorBelief(theta, P, C)
    ek = ekf_step(belief, h, y, Cv, jacobian=lambda th: H)
    th_ref, P_ref = kf_predict_update(theta, P, C, H, b, Cv, y)
    np.testing.assert_allclose(ek.belief.theta, th_ref, atol=1e-8)
    np.testing.assert_allclose(ek.belief.P, P_ref, atol=1e-8)
    uk = ukf_step(belief, h, y, Cv)
    th_ref, P_ref = kf_update_then_inflate(theta, P, C, H, b, Cv, y)
    np.testing.assert_allclose(uk.belief.theta, th_ref, atol=1e-8)
    np.testing.assert_allclose(uk.belief.P, P_ref, atol=1e-8)
    # without process noise both orderings coincide
    b0 = CalibratorBelief(theta, P, np.zeros_like(P))
    th_ref, P_ref = kf_predict_update(theta, P, 0 * C, H, b, Cv, y)
    for res in (ekf_step(b0, h, y, Cv, jacobian=lambda th: H), ukf_step(b0, h, y, Cv)):
        np.testing.assert_allclose(res.belief.theta, th_ref, atol=1e-8)
        np.testing.assert_allclose(res.belief.P, P_ref, atol=1e-8)


def test_zero_innovation_and_flat_objective():
    rng = np.random.default_rng(0)
    H, b, P, C, Cv, theta, _ = linear_problem(rng, 3, 4)
    h = lambda th: th @ H.T + b  # noqa: E731
    belief = CalibratorBelief(theta, P, C)
    y = h(theta[None, :])[0]
    assert np.all(ekf_step(belief, h, y, Cv, jacobian=lambda th: H).delta == 0)
    np.testing.assert_allclose(ukf_step(belief, h, y, Cv).delta, 0.0, atol=1e-14)
    flat = lambda th: np.zeros(th.shape[:-1] + (4,))  # noqa: E731
    uk = ukf_step(belief, flat, np.ones(4), Cv)
    assert np.all(uk.delta == 0)
    np.testing.assert_allclose(uk.belief.P, belief.P + belief.C_theta)
    ek = ekf_step(belief, flat, np.ones(4), Cv)
    assert np.all(ek.delta == 0)
    np.testing.assert_allclose(ek.belief.P, belief.P + belief.C_theta)


def test_singular_innovation():
    b = CalibratorBelief([0.0], [[1.0]], [[0.0]])
    flat = lambda th: np.zeros(th.shape[:-1] + (2,))  # noqa: E731
    with pytest.raises(SingularInnovation):
        ukf_step(b, flat, np.ones(2), np.zeros((2, 2)))


def test_trace_p_non_increasing_without_process_noise():
    rng = np.random.default_rng(5)
    H, b, P, _, Cv, theta, y = linear_problem(rng, 4, 6)
    h = lambda th: th @ H.T + b  # noqa: E731
    for step in (lambda bel: ukf_step(bel, h, y, Cv), lambda bel: ekf_step(bel, h, y, Cv, jacobian=lambda th: H)):
        bel = CalibratorBelief(theta, P, np.zeros((4, 4)))
        traces = []
        for _ in range(20):
            bel = step(bel).belief
            traces.append(np.trace(bel.P))
        assert np.all(np.diff(traces) <= 1e-12)


def test_determinism():
    rng = np.random.default_rng(2)
    H, b, P, C, Cv, theta, y = linear_problem(rng, 3, 5)
    h = lambda th: np.tanh(th @ H.T + b)  # noqa: E731
    bel = CalibratorBelief(theta, P, C)
    a, c = ukf_step(bel, h, y, Cv), ukf_step(bel, h, y, Cv)
    assert a.delta.tobytes() == c.delta.tobytes()


# ---------------------------------------------------------------------------
# windows and replays


def logged_run(controller, theta, N, seed, x0=(0.3, -0.2), ref=1.0):
    rng = np.random.default_rng(seed)
    buf = WindowBuffer(DI, N)
    x = np.asarray(x0, dtype=float)
    z = controller.initial_state(x, np.array([ref]))
    for _ in range(N):
        zk = z
        u, z = controller.control(x, np.array([ref]), z, theta)
        x_next = DI.step(x, u) + np.array([0.0, 0.1 * rng.normal()])
        buf.push_sample(x, u, x_next, zk, [ref])
        x = x_next
    return buf


def test_window_buffer_fifo():
    ctrl = StateFeedbackController()
    buf = WindowBuffer(DI, 5)
    with pytest.raises(WindowTooShort):
        buf.window()
    for k in range(7):
        buf.push_sample([float(k), 0.0], [0.0], [float(k), 0.0])
    w = buf.window()
    assert w.N == 5
    np.testing.assert_array_equal(w.states[:, 0], [2, 3, 4, 5, 6, 6])
    assert logged_run(ctrl, [-1.0, -1.5], 4, 0).full


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(10, 60))
def test_replay_identity(seed, N):
    rng = np.random.default_rng(seed)
    ctrl = StateFeedbackController()
    theta = rng.uniform([-2.0, -2.0], [-0.2, -0.2])
    w = logged_run(ctrl, theta, N, seed, x0=rng.normal(size=2)).window()
    spec = tracking_spec(horizon=N)
    r = replay_h(w, ctrl, DI, spec, theta[None, :])[0]
    np.testing.assert_allclose(r, spec.r(w.logged_trace()), atol=1e-10)


def test_nominal_replay_matches_direct_simulation():
    ctrl = LQRController()
    theta = np.array([1.0, 0.2, 0.5, 0.3])
    N = 30
    refs = np.ones((N + 1, 1))
    w = ReplayWindow(np.zeros(2), np.zeros(0), np.zeros((N, 2)), refs)
    spec = tracking_spec(horizon=N)
    r = replay_h(w, ctrl, DI, spec, theta[None, :])[0]
    # oracle: plain loop with the closed-form gain
    k = ctrl.gain(theta)
    x, ps, us = np.zeros(2), [], []
    for _ in range(N):
        u = k @ (x - np.array([1.0, 0.0]))
        us.append(u)
        x = DI.A @ x + DI.B[:, 0] * u
        ps.append(x[0])
    np.testing.assert_allclose(r, np.concatenate([ps, us]), atol=1e-12)


def test_infeasible_and_diverged_replays_map_to_penalty():
    ctrl = LQRController()
    N = 20
    w = ReplayWindow(np.zeros(2), np.zeros(0), np.zeros((N, 2)), np.ones((N + 1, 1)))
    h = Replay(w, ctrl, DI, tracking_spec(horizon=N))
    out = h(np.array([[1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 1.0, 1.0]]))
    np.testing.assert_array_equal(out[0], h.y + 1e3)
    assert np.all(np.abs(out[1] - h.y) < 1e3)
    assert h.last_penalized == 1
    sf = StateFeedbackController()
    h = Replay(w, sf, DI, tracking_spec(horizon=N))
    out = h(np.array([[50.0, 50.0]]))
    np.testing.assert_array_equal(out[0], h.y + 1e3)


def test_ukf_and_ekf_update_on_window():
    ctrl = StateFeedbackController()
    theta = np.array([-0.5, -0.5])
    w = logged_run(ctrl, theta, 40, 1).window()
    spec = tracking_spec(horizon=40)
    bel = CalibratorBelief.initial(theta, 0.1, 0.01)
    for upd in (ukf_update, ekf_update):
        delta, new = upd(bel, w, ctrl, DI, spec)
        assert np.all(np.isfinite(delta))
        np.testing.assert_allclose(new.theta, theta + delta)
        h = Replay(w, ctrl, DI, spec)
        before = np.sum((h(theta[None])[0] - h.y) ** 2)
        after = np.sum((h(new.theta[None])[0] - h.y) ** 2)
        assert after < before
