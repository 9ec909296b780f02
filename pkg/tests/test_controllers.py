from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autocal.controllers import (
    LAYOUTS,
    BicycleOptimalController,
    LaneOptimalController,
    LaneStateFeedbackController,
    LQRController,
    NeuralNetworkController,
    OutputFeedbackController,
    PIDController,
    StateFeedbackController,
    finite_horizon_gain,
    lqr_control,
    lqr_gain,
    make_controller,
    mlp_control,
    output_feedback_control,
    pack_params,
    pid_control,
    sliding_mode_control,
    state_feedback,
    unpack_params,
)
from autocal.errors import InfeasibleParameters, LengthMismatch, NotSupported
from autocal.numerics import spectral_radius
from autocal.plants import DoubleIntegrator, KinematicBicycle

DI = DoubleIntegrator()


def riccati_oracle(A, B, Q, R, iters=20000):
    P = Q.copy()
    for _ in range(iters):
        BtPA = B.T @ P @ A
        P = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def test_state_feedback_examples():
    assert state_feedback([3.0, -1.0], [0.0, 0.0]) == 0.0
    assert state_feedback([1.0, 0.5], [-1.0, -2.0]) == -2.0
    assert state_feedback([0.0, 0.0], [4.0, 5.0]) == 0.0
    with pytest.raises(LengthMismatch):
        state_feedback([1.0, 0.5], [1.0, 2.0, 3.0])


def test_lqr_gain_matches_fixed_point_oracle():
    k = lqr_gain([1.0, 0.0, 1.0, 1.0])
    K = riccati_oracle(DI.A, DI.B, np.eye(2), np.eye(1))
    np.testing.assert_allclose(k, -K[0], rtol=1e-9)
    assert spectral_radius(DI.A + DI.B @ k[None, :]) < 1
    assert lqr_control([0.0, 0.0], [2.0, 0.1, 1.0, 0.5]) == 0.0


@pytest.mark.parametrize("theta", [[1, 0, 1, 0], [1, 0, 1, -1], [1, 2, 1, 1], [-1, 0, 1, 1]])
def test_lqr_infeasible(theta):
    with pytest.raises(InfeasibleParameters):
        lqr_gain(theta)


def test_lqr_controller_batch_and_cache():
    c = LQRController()
    thetas = np.array([[1.0, 0.0, 1.0, 1.0], [1.0, 0.0, 1.0, 0.0], [2.0, 0.5, 1.0, 0.3]])
    params, ok = c.prepare(thetas)
    np.testing.assert_array_equal(ok, [True, False, True])
    np.testing.assert_allclose(params["k"][0], lqr_gain(thetas[0]))
    np.testing.assert_allclose(params["k"][2], lqr_gain(thetas[2]))
    assert c.gain(thetas[0]) is c.gain(thetas[0].copy())


def test_pid_examples():
    u, z = pid_control(0.7, [0.3, 0.1, -0.2], [0.0, 0.0, 0.0])
    assert u == 0.3
    np.testing.assert_allclose(z, [0.3, 0.7, 0.1])
    u, _ = pid_control(1.0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert u == 1.0


def test_pid_integral_growth_under_constant_error():
    theta = [0.4, 0.25, 0.1]
    z = np.zeros(3)
    us = []
    for _ in range(6):
        u, z = pid_control(2.0, z, theta)
        us.append(u)
    # coefficients sum to 2*theta_I, so with a full history of equal errors
    # each step adds 2*theta_I*e
    np.testing.assert_allclose(np.diff(us)[2:], 2 * 0.25 * 2.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=10), st.floats(-3, 3))
def test_pid_pure_proportional_is_incremental(errors, kp):
    z = np.zeros(3)
    prev_u, prev_e = 0.0, 0.0
    for e in errors:
        u, z = pid_control(e, z, [kp, 0.0, 0.0])
        assert u - prev_u == pytest.approx(kp * (e - prev_e), abs=1e-9)
        prev_u, prev_e = u, e


def test_sliding_mode_examples():
    assert sliding_mode_control(0.0, 0.0, [1.0, 2.0]) == 0.0
    assert sliding_mode_control(1.0, 0.5, [1.0, 2.0]) == -2.5
    assert sliding_mode_control(-0.75, 0.5, [1.5, 3.0]) == -0.75


def test_output_feedback_examples():
    u, z = output_feedback_control(0.4, [0.2, 0.1], [0.0, 0.0, 0.0, 0.0])
    assert u == 0.0
    np.testing.assert_allclose(z, [0.2 + 0.1 * 0.1, 0.1])
    u, z = output_feedback_control(0.2, [0.2, 0.1], [-1.0, -2.0, -7.0, 9.0])
    np.testing.assert_allclose(z, [0.21, 0.1 + 0.1 * u])
    # one predict-correct step worked by hand
    u, z = output_feedback_control(0.0, [0.2, 0.1], [-1.0, -2.0, -0.5, -0.5])
    assert u == pytest.approx(-0.4)
    np.testing.assert_allclose(z, [0.11, -0.04], atol=1e-15)


def mlp_reference(x, theta):
    # independent loop implementation of the same network and packing order
    theta = list(theta)
    take = lambda n: [theta.pop(0) for _ in range(n)]  # noqa: E731
    W_in = np.array(take(20)).reshape(10, 2)
    b_in = take(10)
    W_lay = np.array(take(100)).reshape(10, 10)
    b_lay = take(10)
    W_out = take(10)
    b_out = take(1)[0]
    act = lambda v: v if v > 0 else 0.1 * v  # noqa: E731
    h1 = [act(sum(W_in[i, j] * x[j] for j in range(2)) + b_in[i]) for i in range(10)]
    h2 = [act(sum(W_lay[i, j] * h1[j] for j in range(10)) + b_lay[i]) for i in range(10)]
    return sum(W_out[i] * h2[i] for i in range(10)) + b_out


def test_mlp_zero_and_bias():
    assert mlp_control([1.0, -2.0], np.zeros(151)) == 0.0
    th = np.zeros(151)
    th[-1] = 0.7
    assert mlp_control([1.0, -2.0], th) == 0.7
    assert mlp_control([-5.0, 3.0], th) == 0.7


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mlp_matches_reference(seed):
    rng = np.random.default_rng(seed)
    th, x = rng.normal(size=151), rng.normal(size=2)
    assert mlp_control(x, th) == pytest.approx(mlp_reference(x, th), abs=1e-12)
    # batched controller agrees with the plain function
    c = NeuralNetworkController()
    u, _ = c.control(np.array([x[0] + 1.0, x[1]]), np.array([1.0]), np.zeros(0), th)
    assert u[0] == pytest.approx(mlp_control(x, th), abs=1e-12)


def test_layout_sizes():
    sizes = {k: LAYOUTS[k].n_theta for k in
             ("state_feedback", "optimal", "pid", "sliding_mode", "output_feedback", "neural_network", "hinf")}
    assert sizes == {"state_feedback": 2, "optimal": 4, "pid": 3, "sliding_mode": 2,
                     "output_feedback": 4, "neural_network": 151, "hinf": 8}
    nn = LAYOUTS["neural_network"]
    block = {name: int(np.prod(shape)) for name, shape in nn.slots}
    assert block["W_in"] + block["b_in"] == 30
    assert block["W_lay"] + block["b_lay"] == 110
    assert block["W_out"] + block["b_out"] == 11


def test_pack_pid():
    slots = unpack_params("pid", [1.0, 2.0, 3.0])
    assert (slots["theta_P"], slots["theta_I"], slots["theta_D"]) == (1.0, 2.0, 3.0)
    np.testing.assert_array_equal(pack_params("pid", slots), [1.0, 2.0, 3.0])
    with pytest.raises(LengthMismatch):
        unpack_params("pid", [1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(LAYOUTS)), st.integers(0, 2**31 - 1))
def test_pack_roundtrip(arch, seed):
    th = np.random.default_rng(seed).normal(size=LAYOUTS[arch].n_theta)
    np.testing.assert_array_equal(pack_params(arch, unpack_params(arch, th)), th)


def test_hinf_not_supported():
    with pytest.raises(NotSupported):
        make_controller("hinf")


def test_controllers_deterministic_and_batched():
    rng = np.random.default_rng(0)
    for c, th in [
        (StateFeedbackController(), [-1.0, -2.0]),
        (PIDController(), [-0.5, -0.01, -1.0]),
        (OutputFeedbackController(), [-1.0, -2.0, -0.5, -0.5]),
    ]:
        x, ref = rng.normal(size=2), np.array([1.0])
        z = c.initial_state(x, ref) + rng.normal(size=c.n_z)
        u1, z1 = c.control(x, ref, z, th)
        u2, z2 = c.control(x, ref, z, th)
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(z1, z2)
        params, _ = c.prepare(np.stack([th, th]))
        ub, _ = c.act(np.stack([x, x]), ref, np.stack([z, z]), params)
        np.testing.assert_allclose(ub[1], u1, atol=1e-15)


def test_closed_loop_matrices_match_simulation():
    rng = np.random.default_rng(1)
    cases = [
        (StateFeedbackController(), np.array([-1.0, -1.5])),
        (LQRController(), np.array([1.0, 0.0, 1.0, 1.0])),
        (PIDController(), np.array([-0.6, -0.02, -1.5])),
        (OutputFeedbackController(), np.array([-1.0, -1.5, -0.4, -0.3])),
    ]
    for c, th in cases:
        A_cl = c.closed_loop_matrix(th)
        ref = np.array([0.5])
        x = rng.normal(size=2)
        z = c.initial_state(x, ref) + 0.1 * rng.normal(size=c.n_z)
        s = c.augmented_state(x, ref, z)
        u, z_next = c.control(x, ref, z, th)
        x_next = DI.step(x, u)
        np.testing.assert_allclose(c.augmented_state(x_next, ref, z_next), A_cl @ s, atol=1e-12)


def test_lane_state_feedback():
    c = LaneStateFeedbackController(KinematicBicycle(Ts=0.1))
    x = np.array([0.0, 0.5, 0.1, 18.0, 0.02])
    ref = np.array([1.5, 20.0])
    u, _ = c.control(x, ref, np.zeros(0), [-1.0, -2.0, -3.0])
    assert u[0] == pytest.approx(0.5 * 2.0)
    assert u[1] == pytest.approx(-1.0 * (0.5 - 1.5) - 2.0 * 0.1 - 3.0 * 0.02)


def test_lane_optimal_gains_stabilize_lateral_model():
    from autocal.controllers import lateral_model

    model = KinematicBicycle(Ts=0.1)
    c = LaneOptimalController(model)
    A, B = lateral_model(model, 15.0)
    k = c._gain([1.0, 1.0], 15.0)
    assert spectral_radius(A + B @ k[None, :]) < 1
    _, ok = c.prepare(np.array([[1.0, 1.0], [-1.0, 1.0]]))
    np.testing.assert_array_equal(ok, [True, False])


def test_finite_horizon_gain_converges_to_dare():
    from autocal.numerics import dare_solve

    K_fh = finite_horizon_gain(DI.A, DI.B, np.eye(2), np.eye(1), 2000)
    _, K = dare_solve(DI.A, DI.B, np.eye(2), np.eye(1))
    np.testing.assert_allclose(K_fh, K, rtol=1e-8)


def test_bicycle_optimal_regulates_kinematic_model():
    model = KinematicBicycle()
    c = BicycleOptimalController(model)
    x = np.array([0.0, 2.0, 0.0, 12.0, 0.0])
    ref = np.array([0.0, 10.0])
    params, ok = c.prepare(np.zeros(6))
    assert ok
    for _ in range(60):
        u, _ = c.act(x, ref, np.zeros(0), params)
        x = model.step(x, u)
    assert abs(x[1]) < 0.05 and abs(x[3] - 10.0) < 0.05
