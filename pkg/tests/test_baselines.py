import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from ddmpc.baselines import KinematicMPC, KinMpcConfig, PidConfig, PIDSteering, error_dynamics
from ddmpc.qp import CONVERGED, QpProblem, kkt_residuals
from oracles import lqr_gain, riccati_iteration_gain

V, WB, DT = 10.0, 2.91, 0.05
WIDE = {"u_min": -0.5, "u_max": 0.5}


# ---------------------------------------------------------------- PID


def test_pid_zero_errors_zero_steer():
    cmd = PIDSteering().step(0.0, 0.0, DT)
    assert cmd.delta_l == 0.0 and cmd.delta_r == 0.0


def test_pid_proportional_law():
    pid = PIDSteering(kp=1.0, ki=0.0, kd=0.0, k_heading=0.0, **WIDE)
    cmd = pid.step(0.1, 0.0, DT)
    assert cmd.delta_l == pytest.approx(0.1) and cmd.delta_r == cmd.delta_l


def test_pid_full_law():
    pid = PIDSteering(kp=2.0, ki=0.5, kd=0.1, k_heading=3.0, integral_limit=1.0, **WIDE)
    pid.step(0.02, 0.0, DT)
    cmd = pid.step(0.04, 0.01, DT)
    expected = 2.0 * 0.04 + 0.5 * (0.02 + 0.04) * DT + 0.1 * (0.04 - 0.02) / DT + 3.0 * 0.01
    assert cmd.delta_l == pytest.approx(expected, rel=1e-12)


def test_pid_anti_windup():
    limit = math.radians(1.0)
    pid = PIDSteering(kp=0.0, ki=2.0, kd=0.0, k_heading=0.0, integral_limit=limit, **WIDE)
    for _ in range(1000):
        cmd = pid.step(0.5, 0.0, DT)
    assert pid.ki * pid.integral_ == pytest.approx(limit)
    assert cmd.delta_l == pytest.approx(limit)
    # it unwinds as soon as the error flips instead of paying back a huge integral
    cmd = pid.step(-0.5, 0.0, DT)
    assert cmd.delta_l < limit


def test_pid_output_clamped():
    pid = PIDSteering(kp=100.0)
    assert pid.step(1.0, 0.0, DT).delta_l == pytest.approx(math.radians(5.0))
    assert pid.step(-1.0, 0.0, DT).delta_l == pytest.approx(-math.radians(5.0))


def test_pid_reset_clears_state():
    pid = PIDSteering(ki=0.1)
    first = [pid.step(e, 0.0, DT).delta_l for e in (0.1, 0.2, 0.3)]
    pid.reset()
    again = [pid.step(e, 0.0, DT).delta_l for e in (0.1, 0.2, 0.3)]
    assert first == again


def test_pid_validation():
    with pytest.raises(ValueError):
        PidConfig(kp=math.inf)
    with pytest.raises(ValueError):
        PidConfig(u_min=-1.0)
    with pytest.raises(ValueError):
        PIDSteering(u_min=0.1, u_max=0.0).reset()
    with pytest.raises(ValueError):
        PIDSteering().step(0.0, 0.0, 0.0)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-1, 1)), min_size=1, max_size=50))
def test_pid_respects_bounds(errors):
    pid = PIDSteering(ki=0.05)
    for e, h in errors:
        cmd = pid.step(e, h, DT)
        assert pid.u_min <= cmd.delta_l <= pid.u_max


def test_pid_from_config_and_clone():
    pid = PIDSteering.from_config(PidConfig(kp=3.0))
    assert pid.kp == 3.0
    assert clone(pid).get_params() == pid.get_params()


# ---------------------------------------------------------------- kinematic MPC


def test_error_dynamics_straight_road():
    A, B = error_dynamics(V, WB, DT, np.zeros(3))
    np.testing.assert_allclose(A, [[1.0, V * DT], [0.0, 1.0]])
    np.testing.assert_allclose(B[0], [0.5 * V * V / WB * DT**2, V / WB * DT])


def test_error_dynamics_matches_linearised_plant():
    # heading error rate is V/L (tan(delta) - tan(delta_ref)); compare slopes
    ref = 0.1
    _, B = error_dynamics(V, WB, DT, np.array([ref]))
    h = 1e-7
    slope = V / WB * (math.tan(ref + h) - math.tan(ref - h)) / (2 * h) * DT
    assert B[0, 1] == pytest.approx(slope, rel=1e-6)


def test_kin_mpc_zero_error_zero_steer():
    cmd, diag = KinematicMPC().step(0.0, 0.0, np.zeros(30), V, WB, DT)
    assert diag["status"] == CONVERGED
    assert cmd.delta_l == 0.0 and cmd.delta_r == 0.0


@pytest.mark.parametrize("offset", [-0.5, -0.05, 0.05, 0.5])
def test_kin_mpc_steer_opposes_offset(offset):
    cmd, _ = KinematicMPC().step(offset, 0.0, np.zeros(30), V, WB, DT)
    assert np.sign(cmd.delta_l) == -np.sign(offset)


def test_kin_mpc_steady_curve_feeds_forward():
    kappa = np.full(30, 0.02)
    cmd, _ = KinematicMPC(r=1e-6, **WIDE).step(0.0, 0.0, kappa, V, WB, DT)
    assert cmd.delta_l == pytest.approx(math.atan(WB * 0.02), rel=1e-3)


def test_kin_mpc_matches_lqr_for_long_horizon():
    q_lat, q_head, r = 1.0, 1.0, 2e-2
    A, B = error_dynamics(V, WB, DT, np.zeros(1))
    Q, R = np.diag([q_lat, q_head]), np.array([[r]])
    K = lqr_gain(A, B[0][:, None], Q, R)
    np.testing.assert_allclose(K, riccati_iteration_gain(A, B[0][:, None], Q, R), rtol=1e-8)
    mpc = KinematicMPC(horizon=300, q_lateral=q_lat, q_heading=q_head, r=r, **WIDE)
    for e0 in ([0.01, 0.0], [0.0, 0.002], [-0.02, 0.001]):
        cmd, diag = mpc.step(e0[0], e0[1], np.zeros(300), V, WB, DT)
        assert not diag["result"].active  # small offsets stay unconstrained
        assert cmd.delta_l == pytest.approx(float(-(K @ e0)[0]), rel=1e-6, abs=1e-12)


def test_kin_mpc_bounds_and_kkt():
    mpc = KinematicMPC()
    for lat in (-3.0, -0.3, 0.0, 0.4, 2.0):
        kappa = np.linspace(-0.05, 0.05, 30)
        cmd, diag = mpc.step(lat, 0.1, kappa, V, WB, DT)
        assert diag["status"] == CONVERGED
        cfg = mpc.config_
        assert cfg.u_min - 1e-12 <= diag["u_seq"].min() and diag["u_seq"].max() <= cfg.u_max + 1e-12
        Hess, g, *_ = mpc.condensed([lat, 0.1], kappa, V, WB, DT)
        prob = QpProblem(Hess, g, C=np.eye(30), lb=np.full(30, cfg.u_min), ub=np.full(30, cfg.u_max))
        res = diag["result"]
        kkt = kkt_residuals(prob, res.x, res.eq_multipliers, res.box_multipliers)
        assert max(v for k, v in kkt.items() if k != "stationarity_rel") <= cfg.solver_tol


def test_kin_mpc_warm_start_is_transparent():
    kappa = np.full(30, 0.03)
    warm, cold = KinematicMPC(), KinematicMPC()
    for lat in (1.0, 0.8, 0.5, 0.2):
        a, _ = warm.step(lat, 0.0, kappa, V, WB, DT)
        cold.reset()
        b, _ = cold.step(lat, 0.0, kappa, V, WB, DT)
        assert a.delta_l == pytest.approx(b.delta_l, abs=1e-10)


def test_kin_mpc_short_window_rejected():
    with pytest.raises(ValueError, match="curvature"):
        KinematicMPC().step(0.0, 0.0, np.zeros(10), V, WB, DT)


def test_kin_mpc_config_validation():
    for bad in ({"horizon": 0}, {"r": 0.0}, {"q_lateral": -1.0}, {"u_min": 0.1, "u_max": 0.0}):
        with pytest.raises(ValueError):
            KinMpcConfig(**bad)


def test_kin_mpc_from_config():
    mpc = KinematicMPC.from_config(KinMpcConfig(horizon=12))
    assert mpc.horizon == 12 and clone(mpc).get_params() == mpc.get_params()
