"""Control-law algebra: PID discretization, blend endpoints, index arithmetic."""

import numpy as np
import pytest

from stsexo.controllers import (
    AlphaCurvePoint,
    HybridConfig,
    LqrSpec,
    PerformanceIndex,
    PidGains,
    PidState,
    hybrid_step,
    lqr_step,
    per_joint_gain_matrix,
    performance_index,
    pid_step,
    tune_alpha,
)
from stsexo.sim import SimLog

ANKLE, KNEE, HIP = 0, 1, 2


def gains(kp=(80.0, 150.0, 120.0), ki=(5.4, 10.2, 8.5), kd=(12.0, 22.0, 18.0), **kw):
    return PidGains(kp=np.array(kp), ki=np.array(ki), kd=np.array(kd), **kw)


def make_log(t, err_rad, tau):
    n = t.shape[0]
    q_ref = np.zeros((n, 3))
    q = q_ref - err_rad
    z = np.zeros((n, 3))
    return SimLog(
        controller="test",
        t=t,
        q=q,
        qd=z,
        q_ref=q_ref,
        qd_ref=z,
        tau=tau,
        saturated=np.zeros(n, bool),
        energy=np.zeros(n),
    )


# ---------------------------------------------------------------------------
# PID


def test_pid_zero_error_zero_output():
    st = PidState.zero(3)
    tau, st = pid_step(gains(), st, np.zeros(3), np.zeros(3), 1e-3)
    assert np.all(tau == 0.0)
    tau, _ = pid_step(gains(), st, np.zeros(3), np.zeros(3), 1e-3)
    assert np.all(tau == 0.0)


def test_pid_proportional_arithmetic():
    g = gains(ki=(0, 0, 0), kd=(0, 0, 0))
    e = np.zeros(3)
    e[HIP] = 0.1
    tau, _ = pid_step(g, PidState.zero(3), e, np.zeros(3), 1e-3)
    assert tau[HIP] == pytest.approx(12.0, abs=1e-12)
    assert tau[ANKLE] == 0.0 and tau[KNEE] == 0.0


def test_pid_integral_of_constant_error():
    g = gains(kp=(0, 0, 0), kd=(0, 0, 0), ki=(8.5, 8.5, 8.5))
    st = PidState.zero(3)
    e = np.full(3, 0.01)
    dt = 1e-3
    tau = np.zeros(3)
    for _ in range(1000):
        tau, st = pid_step(g, st, e, np.zeros(3), dt)
    assert tau[0] == pytest.approx(0.085, abs=1e-3)


def test_pid_windup_clamp():
    g = gains(windup_limit_nm=50.0)
    st = PidState.zero(3)
    e = np.full(3, 2.0)  # large persistent error
    for _ in range(5000):
        _, st = pid_step(g, st, e, np.zeros(3), 1e-3)
        bound = g.windup_limit_nm / g.ki
        assert np.all(np.abs(st.integral) <= bound + 1e-12)


def test_pid_conditional_integration_freezes():
    g = gains(kp=(100.0,) * 3, ki=(10.0,) * 3, kd=(0.0,) * 3, windup_limit_nm=1e6)
    st = PidState.zero(3)
    e = np.full(3, 1.0)
    limit = np.full(3, 10.0)  # kp*e alone already saturates
    _, st1 = pid_step(g, st, e, np.zeros(3), 1e-3, tau_limit=limit)
    _, st2 = pid_step(g, st1, e, np.zeros(3), 1e-3, tau_limit=limit)
    np.testing.assert_array_equal(st1.integral, st2.integral)
    assert np.all(st1.integral == 0.0)  # frozen at initial value


def test_pid_derivative_filter_smooths_step():
    g = gains(kp=(0,) * 3, ki=(0,) * 3, kd=(1.0,) * 3, d_filter_tau_s=0.01)
    st = PidState.zero(3)
    e_dot = np.full(3, 1.0)
    tau1, st = pid_step(g, st, np.zeros(3), e_dot, 1e-3)
    assert 0 < tau1[0] < 1.0  # first-order filter: partial response
    for _ in range(200):
        tau, st = pid_step(g, st, np.zeros(3), e_dot, 1e-3)
    assert tau[0] == pytest.approx(1.0, abs=1e-3)


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_step(gains(), PidState.zero(3), np.zeros(3), np.zeros(3), 0.0)


# ---------------------------------------------------------------------------
# LQR step


def test_lqr_zero_error_zero_torque():
    K = per_joint_gain_matrix([10.0, 20.0, 30.0], [1.0, 2.0, 3.0])
    x = np.arange(6.0)
    tau = lqr_step(K, x, x, 0.0)
    np.testing.assert_array_equal(tau, np.zeros(3))


def test_lqr_hip_gain_arithmetic():
    K = per_joint_gain_matrix([0.0, 0.0, 44.72], [0.0, 0.0, 13.76])
    x = np.zeros(6)
    x_ref = np.zeros(6)
    x_ref[HIP] = 0.1  # reference ahead of the state by 0.1 rad
    tau = lqr_step(K, x, x_ref, 0.0)
    assert tau[HIP] == pytest.approx(4.472, abs=1e-9)


def test_lqr_linear_in_error():
    rng = np.random.default_rng(3)
    K = rng.normal(size=(3, 6))
    x_ref = rng.normal(size=6)
    dx = rng.normal(size=6)
    ff = rng.normal(size=3)
    t1 = lqr_step(K, x_ref + dx, x_ref, ff) - ff
    t2 = lqr_step(K, x_ref + 2 * dx, x_ref, ff) - ff
    np.testing.assert_allclose(t2, 2 * t1, atol=1e-12)


def test_lqr_dimension_mismatch():
    K = per_joint_gain_matrix([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        lqr_step(K, np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# hybrid blend


def hybrid_cfg(alpha):
    return HybridConfig(alpha=alpha, pid=gains(), lqr=LqrSpec(K=np.zeros((3, 6))))


def test_hybrid_endpoints_bitwise():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        tl = rng.normal(scale=50, size=3)
        tp = rng.normal(scale=50, size=3)
        assert np.array_equal(hybrid_step(hybrid_cfg(0.0), tl, tp), tp)
        assert np.array_equal(hybrid_step(hybrid_cfg(1.0), tl, tp), tl)


def test_hybrid_affine_and_bounded():
    rng = np.random.default_rng(9)
    tl = rng.normal(size=3) * 30
    tp = rng.normal(size=3) * 30
    lo, hi = np.minimum(tl, tp), np.maximum(tl, tp)
    prev = hybrid_step(hybrid_cfg(0.0), tl, tp)
    for a in np.linspace(0, 1, 21):
        tau = hybrid_step(hybrid_cfg(float(a)), tl, tp)
        np.testing.assert_allclose(tau, a * tl + (1 - a) * tp, atol=1e-12)
        assert np.all(tau >= lo - 1e-12) and np.all(tau <= hi + 1e-12)
        # componentwise monotone toward tau_lqr as alpha grows
        assert np.all((tau - prev) * np.sign(tl - tp) >= -1e-12)
        prev = tau


def test_hybrid_paper_arithmetic():
    tau = hybrid_step(hybrid_cfg(0.65), np.full(3, 10.0), np.full(3, 20.0))
    np.testing.assert_allclose(tau, 13.5, atol=1e-12)


def test_hybrid_alpha_range_checked():
    with pytest.raises(ValueError):
        HybridConfig(alpha=1.2, pid=gains(), lqr=LqrSpec(K=np.zeros((3, 6))))


# ---------------------------------------------------------------------------
# performance index


def test_index_zero_for_perfect_log():
    t = np.linspace(0, 3, 301)
    perf = performance_index(make_log(t, np.zeros((301, 3)), np.zeros((301, 3))), 1.0, 1.0)
    assert perf.J == 0.0


def test_index_rmse_term():
    t = np.linspace(0, 3, 301)
    perf = performance_index(make_log(t, np.full((301, 3), 0.1), np.zeros((301, 3))), 1.0, 0.0)
    assert perf.J == pytest.approx(0.1, abs=1e-12)


def test_index_energy_term():
    t = np.linspace(0, 3, 3001)
    tau = np.zeros((3001, 3))
    tau[:, 0] = 10.0  # ||tau||^2 = 100 for 3 s -> integral 300
    perf = performance_index(make_log(t, np.zeros((3001, 3)), tau), 0.0, 1.0)
    assert perf.J == pytest.approx(300.0, rel=1e-9)
    assert perf.torque_energy == pytest.approx(300.0, rel=1e-9)


def test_index_additive_and_nonnegative():
    t = np.linspace(0, 3, 301)
    l = make_log(t, np.full((301, 3), 0.05), np.full((301, 3), 4.0))
    p = performance_index(l, 2.0, 3.0)
    assert p.J == pytest.approx(2.0 * p.rmse_total_rad + 3.0 * p.torque_energy, rel=1e-12)
    assert p.J >= 0


def test_index_rejects_empty_log():
    with pytest.raises(ValueError):
        performance_index(make_log(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3))))


# ---------------------------------------------------------------------------
# alpha tuning


def fake_scenario(rmse_by_alpha):
    t = np.linspace(0, 1, 101)

    def run(alpha):
        return make_log(t, np.full((101, 3), rmse_by_alpha(alpha)), np.zeros((101, 3)))

    return run


def test_tune_alpha_singleton():
    best, curve = tune_alpha(fake_scenario(lambda a: 0.1), grid=[0.65])
    assert best == 0.65
    assert len(curve) == 1 and isinstance(curve[0], AlphaCurvePoint)


def test_tune_alpha_two_point_comparison():
    best, _ = tune_alpha(fake_scenario(lambda a: 0.2 if a < 0.5 else 0.1), w2=0.0, grid=[0.0, 1.0])
    assert best == 1.0
    best, _ = tune_alpha(fake_scenario(lambda a: 0.1 if a < 0.5 else 0.2), w2=0.0, grid=[0.0, 1.0])
    assert best == 0.0


def test_tune_alpha_tie_breaks_high():
    best, curve = tune_alpha(fake_scenario(lambda a: 0.1), w2=0.0, grid=[0.0, 0.5, 1.0])
    assert best == 1.0
    assert [p.alpha for p in curve] == [0.0, 0.5, 1.0]


def test_tune_alpha_convex_curve():
    best, _ = tune_alpha(fake_scenario(lambda a: (a - 0.6) ** 2 + 0.01), w2=0.0, grid=[0.05 * i for i in range(21)])
    assert best == pytest.approx(0.6)


def test_tune_alpha_bad_grid():
    with pytest.raises(ValueError):
        tune_alpha(fake_scenario(lambda a: 0.1), grid=[])
    with pytest.raises(ValueError):
        tune_alpha(fake_scenario(lambda a: 0.1), grid=[1.5])


def test_tune_alpha_propagates_failure():
    def run(alpha):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="alpha=0.3"):
        tune_alpha(run, grid=[0.3])


def test_performance_index_dataclass():
    p = PerformanceIndex(w1=1.0, w2=2.0, rmse_total_rad=0.5, torque_energy=10.0)
    assert p.J == pytest.approx(20.5)
