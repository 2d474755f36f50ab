"""Reference trajectory generation, filtering, resampling, and phases."""

import io

import numpy as np
import pytest

from stsexo.trajectory import (
    DEFAULT_WAYPOINTS_DEG,
    JOINT_COLUMNS,
    Phase,
    Trajectory,
    differentiate,
    generate_sts_reference,
    load_trajectory_csv,
    phase_at,
    resample,
    save_trajectory_csv,
    zero_lag_filter,
)

ANKLE, KNEE, HIP = 0, 1, 2


@pytest.fixture(scope="module")
def sts_ref():
    return generate_sts_reference()


# ---------------------------------------------------------------------------
# generated reference shape


def test_initial_posture(sts_ref):
    q0 = np.degrees(sts_ref.q[0])
    assert q0[HIP] == pytest.approx(88.0, abs=1e-9)
    assert q0[KNEE] == pytest.approx(98.0, abs=1e-9)
    assert q0[ANKLE] == pytest.approx(12.0, abs=1e-9)


def test_terminal_residual_flexion(sts_ref):
    qT = np.degrees(sts_ref.q[-1])
    assert 0.0 <= qT[HIP] <= 5.0
    assert 0.0 <= qT[KNEE] <= 5.0


def test_ankle_peak_in_phase_one(sts_ref):
    tn = sts_ref.t_norm()
    phase1 = tn <= 0.33
    peak = np.degrees(np.max(sts_ref.q[phase1, ANKLE]))
    assert peak == pytest.approx(18.0, abs=1.0)
    # the overall ankle maximum is the phase-1 peak
    assert np.max(sts_ref.q[:, ANKLE]) == pytest.approx(np.max(sts_ref.q[phase1, ANKLE]), abs=1e-12)


def test_fastest_motion_in_momentum_transfer(sts_ref):
    tn = sts_ref.t_norm()
    speed = np.max(np.abs(sts_ref.qd), axis=1)
    k = int(np.argmax(speed))
    assert 0.33 < tn[k] <= 0.66


def test_endpoint_velocities_zero(sts_ref):
    assert np.max(np.abs(sts_ref.qd[0])) <= 1e-9
    assert np.max(np.abs(sts_ref.qd[-1])) <= 1e-9
    assert np.max(np.abs(sts_ref.qdd[0])) <= 1e-9
    assert np.max(np.abs(sts_ref.qdd[-1])) <= 1e-9


@pytest.mark.parametrize("duration", [2.0, 3.5, 5.0])
@pytest.mark.parametrize("rate", [100.0, 500.0, 1000.0])
def test_constraints_hold_across_durations_and_rates(duration, rate):
    traj = generate_sts_reference(duration_s=duration, rate_hz=rate)
    assert traj.n_samples == round(duration * rate) + 1
    q_deg = np.degrees(traj.q)
    assert q_deg[0, HIP] == pytest.approx(88.0, abs=1e-9)
    assert 0.0 <= q_deg[-1, HIP] <= 5.0
    assert 0.0 <= q_deg[-1, KNEE] <= 5.0
    tn = traj.t_norm()
    peak = np.max(q_deg[tn <= 0.33, ANKLE])
    assert peak == pytest.approx(18.0, abs=1.0)
    assert np.max(np.abs(traj.qd[0])) <= 1e-9
    assert np.max(np.abs(traj.qd[-1])) <= 1e-9


def test_c1_sample_continuity(sts_ref):
    dt = sts_ref.t[1] - sts_ref.t[0]
    dq = np.abs(np.diff(sts_ref.q, axis=0))
    qd_max = np.max(np.abs(sts_ref.qd))
    assert np.max(dq) < qd_max * dt * 1.5


def test_waypoint_validation():
    bad = dict(DEFAULT_WAYPOINTS_DEG)
    bad["hip"] = [(0.0, 88.0), (0.0, 70.0), (1.0, 2.0)]
    with pytest.raises(ValueError, match="strictly increasing"):
        generate_sts_reference(bad)
    bad["hip"] = [(0.0, 200.0), (1.0, 2.0)]
    with pytest.raises(ValueError, match="180"):
        generate_sts_reference(bad)


def test_integrate_velocity_recovers_angle(sts_ref):
    # trapezoidal integration of qd reproduces q
    dt = sts_ref.t[1] - sts_ref.t[0]
    for col in range(3):
        q_int = sts_ref.q[0, col] + np.concatenate(
            ([0.0], np.cumsum(0.5 * (sts_ref.qd[1:, col] + sts_ref.qd[:-1, col]) * dt))
        )
        assert np.max(np.abs(q_int - sts_ref.q[:, col])) < 1e-3


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip(tmp_path, sts_ref):
    coarse = resample(sts_ref, 100.0)
    path = tmp_path / "traj.csv"
    save_trajectory_csv(coarse, path)
    back = load_trajectory_csv(path)
    np.testing.assert_allclose(back.q, coarse.q, atol=1e-9)
    np.testing.assert_allclose(back.t, coarse.t, atol=1e-9)


def test_csv_well_formed_minimal():
    text = "time_s,hip_deg,knee_deg,ankle_deg\n0,88,98,12\n1,60,70,15\n2,30,40,8\n3,2,3,2\n"
    traj = load_trajectory_csv(io.StringIO(text))
    assert traj.n_samples == 4
    assert traj.q[0, HIP] == pytest.approx(np.radians(88.0))
    assert traj.q[0, ANKLE] == pytest.approx(np.radians(12.0))


def test_csv_nonmonotone_time_cites_line():
    rows = ["time_s,hip_deg,knee_deg,ankle_deg"]
    for i in range(8):
        t = i * 0.1 if i != 5 else 0.2  # decreasing at data row 6 -> file line 7
        rows.append(f"{t},1,2,3")
    with pytest.raises(ValueError, match="line 7"):
        load_trajectory_csv(io.StringIO("\n".join(rows)))


def test_csv_malformed_row_cites_line():
    text = "time_s,hip_deg,knee_deg,ankle_deg\n0,1,2,3\n0.1,x,2,3\n"
    with pytest.raises(ValueError, match="line 3"):
        load_trajectory_csv(io.StringIO(text))


def test_csv_too_few_samples():
    text = "time_s,hip_deg,knee_deg,ankle_deg\n0,1,2,3\n1,1,2,3\n"
    with pytest.raises(ValueError, match="at least 4"):
        load_trajectory_csv(io.StringIO(text))


# ---------------------------------------------------------------------------
# zero-lag filter


def test_filter_dc_unity():
    x = np.ones(3000)
    y = zero_lag_filter(x, 6.0, 4, 1000.0)
    assert np.max(np.abs(y - 1.0)) < 1e-9


def test_filter_half_power_at_cutoff():
    rate, f = 1000.0, 6.0
    t = np.arange(0, 10.0, 1.0 / rate)
    x = np.sin(2 * np.pi * f * t)
    y = zero_lag_filter(x, f, 4, rate)
    mid = slice(len(t) // 4, 3 * len(t) // 4)
    amp = np.max(np.abs(y[mid]))
    assert amp == pytest.approx(0.5, rel=0.02)
    # zero-phase: each output crossing sits within one sample of an input crossing
    xc = np.where(np.diff(np.signbit(x[mid])))[0]
    yc = np.where(np.diff(np.signbit(y[mid])))[0]
    shift = max(np.min(np.abs(xc - c)) for c in yc)
    assert shift <= 1


def test_filter_stopband_attenuation():
    # analytic two-pass magnitude at w/wc = 5 for order-2 passes: 1/(1+5^4)
    rate = 1000.0
    t = np.arange(0, 5.0, 1.0 / rate)
    x = np.sin(2 * np.pi * 30.0 * t)
    y = zero_lag_filter(x, 6.0, 4, rate)
    mid = slice(len(t) // 4, 3 * len(t) // 4)
    assert np.max(np.abs(y[mid])) == pytest.approx(1.0 / (1.0 + 5.0**4), rel=0.05)
    # the steeper per-pass convention stays selectable via the total order
    y8 = zero_lag_filter(x, 6.0, 8, rate)
    assert np.max(np.abs(y8[mid])) < 1e-3


def test_filter_rejects_bad_args():
    x = np.ones(100)
    with pytest.raises(ValueError, match="Nyquist"):
        zero_lag_filter(x, 600.0, 4, 1000.0)
    with pytest.raises(ValueError, match="even"):
        zero_lag_filter(x, 6.0, 3, 1000.0)
    with pytest.raises(ValueError, match="too short"):
        zero_lag_filter(np.ones(5), 6.0, 4, 1000.0)


def test_filter_nearly_idempotent_on_generated(sts_ref):
    for col in range(3):
        y = zero_lag_filter(sts_ref.q[:, col], 6.0, 4, sts_ref.sample_rate_hz)
        assert np.degrees(np.max(np.abs(y - sts_ref.q[:, col]))) < 0.5


# ---------------------------------------------------------------------------
# resampling


def test_resample_identity(sts_ref):
    again = resample(sts_ref, sts_ref.sample_rate_hz)
    np.testing.assert_allclose(again.q, sts_ref.q, atol=1e-12)


def test_resample_preserves_linear_ramp():
    t = np.linspace(0, 2, 51)
    q = np.outer(t, [0.1, 0.2, -0.3])
    traj = Trajectory(t=t, q=q)
    fine = resample(traj, 997.0)
    expected = np.outer(fine.t, [0.1, 0.2, -0.3])
    np.testing.assert_allclose(fine.q, expected, atol=1e-10)


def test_resample_sinusoid_accuracy():
    rate0 = 100.0
    t = np.arange(0, 3.0 + 1e-12, 1 / rate0)
    q = np.stack([np.sin(2 * np.pi * 1.0 * t)] * 3, axis=1) * 0.3
    traj = Trajectory(t=t, q=q)
    fine = resample(traj, 1000.0)
    ref = np.sin(2 * np.pi * 1.0 * fine.t) * 0.3
    assert np.max(np.abs(fine.q[:, 0] - ref)) < 1e-4


def test_resample_endpoints_exact(sts_ref):
    fine = resample(sts_ref, 777.0)
    np.testing.assert_allclose(fine.q[0], sts_ref.q[0], atol=0)
    np.testing.assert_allclose(fine.q[-1], sts_ref.q[-1], atol=0)


# ---------------------------------------------------------------------------
# differentiation


def test_differentiate_quadratic_exact():
    t = np.arange(0, 1.0 + 1e-12, 1e-3)
    q = np.stack([t**2] * 3, axis=1)
    traj = Trajectory(t=t, q=q)
    qd, qdd = differentiate(traj)
    np.testing.assert_allclose(qd[:, 0], 2 * t, atol=1e-9)
    np.testing.assert_allclose(qdd[:, 0], 2.0, atol=1e-6)


def test_differentiate_constant_zero():
    t = np.linspace(0, 1, 11)
    traj = Trajectory(t=t, q=np.ones((11, 3)))
    qd, qdd = differentiate(traj)
    assert np.max(np.abs(qd)) < 1e-12
    assert np.max(np.abs(qdd)) < 1e-12


def test_differentiate_prefers_analytic(sts_ref):
    qd, _ = differentiate(sts_ref)
    assert qd is sts_ref.qd
    assert sts_ref.derivative_source == "analytic"


# ---------------------------------------------------------------------------
# phases


def test_phase_lookup():
    assert phase_at(0.2) is Phase.FLEXION_MOMENTUM
    assert phase_at(0.33) is Phase.FLEXION_MOMENTUM
    assert phase_at(0.330001) is Phase.MOMENTUM_TRANSFER
    assert phase_at(0.66) is Phase.MOMENTUM_TRANSFER
    assert phase_at(1.0) is Phase.EXTENSION
    assert phase_at(0.0) is Phase.FLEXION_MOMENTUM
    with pytest.raises(ValueError):
        phase_at(1.5)


def test_phase_partition_exhaustive():
    grid = np.arange(0.0, 1.0 + 1e-9, 1e-4)
    phases = [phase_at(float(x)) for x in grid]
    # every point maps to exactly one phase and transitions happen once
    changes = sum(1 for a, b in zip(phases, phases[1:]) if a is not b)
    assert changes == 2
    assert phases[0] is Phase.FLEXION_MOMENTUM
    assert phases[-1] is Phase.EXTENSION


def test_joint_columns_order():
    assert JOINT_COLUMNS == ("ankle", "knee", "hip")
