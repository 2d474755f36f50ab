"""Deterministic closed-loop simulation of controller plus chain plant.

Fixed-step RK4 integrates the rigid-body ODE with the commanded torque
held constant over each control step (zero-order hold at the trajectory
sample rate). The controller sees the sampled state once per step.
Identical inputs always produce bit-identical logs; there is no hidden
randomness anywhere in the loop.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .controllers import (
    ControllerSpec,
    FeedforwardSpec,
    HybridConfig,
    LqrSpec,
    PidSpec,
    PidState,
    hybrid_step,
    lqr_step,
    pid_step,
)
from .dynamics import (
    ChainModel,
    JointState,
    forward_dynamics,
    gravity_vector,
    inverse_dynamics,
    scale_segment_masses,
    total_energy,
)
from .trajectory import Trajectory, with_numeric_derivatives

log = logging.getLogger("stsexo.sim")

SIMLOG_CSV_HEADER = [
    "t_s",
    "hip_ref_deg",
    "knee_ref_deg",
    "ankle_ref_deg",
    "hip_deg",
    "knee_deg",
    "ankle_deg",
    "tau_hip_nm",
    "tau_knee_nm",
    "tau_ankle_nm",
    "energy_j",
]

# internal joint order is (ankle, knee, hip); CSV columns are hip-first
_TO_CSV = [2, 1, 0]


class SimulationDiverged(RuntimeError):
    def __init__(self, t: float, detail: str):
        super().__init__(f"simulation diverged at t={t:.4f} s: {detail}")
        self.t = t


@dataclass(frozen=True)
class TorquePulse:
    """External torque disturbance active on [start_s, start_s + width_s)."""

    start_s: float
    width_s: float
    magnitude_nm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "magnitude_nm", np.asarray(self.magnitude_nm, dtype=float))
        if self.start_s < 0 or self.width_s < 0:
            raise ValueError("pulse start and width must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop run settings.

    ``initial_state`` overrides the default start (the seated reference
    posture at rest, shifted by ``initial_offset_deg`` on every joint).
    ``param_perturbation`` scales segment masses by (1 + fraction) before
    simulating, leaving the controller's model knowledge unchanged.
    """

    dt_s: float = 1e-3
    duration_s: float = 3.0
    initial_state: JointState | None = None
    initial_offset_deg: float = 0.0
    disturbance: TorquePulse | None = None
    param_perturbation: Sequence[float] | None = None

    def __post_init__(self):
        if self.dt_s <= 0:
            raise ValueError("dt must be positive")
        if self.duration_s < self.dt_s:
            raise ValueError("duration must cover at least one step")
        if self.param_perturbation is not None:
            fr = np.asarray(self.param_perturbation, dtype=float)
            if np.any(np.abs(fr) > 0.5):
                raise ValueError("|mass perturbation fraction| must be <= 0.5")


@dataclass(frozen=True)
class SimLog:
    """Time series of one closed-loop run (all arrays share a length)."""

    controller: str
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    q_ref: np.ndarray
    qd_ref: np.ndarray
    tau: np.ndarray
    saturated: np.ndarray
    energy: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    def tracking_error(self) -> np.ndarray:
        return self.q - self.q_ref


def perturb_model(model: ChainModel, fractions: Sequence[float]) -> ChainModel:
    """Segment masses and inertias scaled by (1 + fraction), new model returned."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(np.abs(fractions) > 0.5):
        raise ValueError("|fraction| must be <= 0.5")
    return scale_segment_masses(model, fractions)


def _controller_label(spec: ControllerSpec) -> str:
    return {
        PidSpec: "pid",
        LqrSpec: "lqr",
        HybridConfig: "hybrid",
        FeedforwardSpec: "feedforward",
    }[type(spec)]


def simulate(
    model: ChainModel,
    spec: ControllerSpec,
    traj: Trajectory,
    cfg: SimConfig,
    label: str | None = None,
) -> SimLog:
    """Run one deterministic closed-loop simulation.

    The trajectory must be uniformly sampled at the control rate 1/dt
    and cover the simulation duration (resample first if needed).
    Raises SimulationDiverged when the state leaves |q| < 2*pi or turns
    non-finite, reporting the failure time.
    """
    if not traj.is_uniform:
        raise ValueError("trajectory must be uniformly sampled; resample it first")
    if abs(traj.sample_rate_hz - 1.0 / cfg.dt_s) > 1e-6 * traj.sample_rate_hz:
        raise ValueError(
            f"trajectory rate {traj.sample_rate_hz:.3f} Hz does not match control rate "
            f"{1.0 / cfg.dt_s:.3f} Hz; resample it first"
        )
    n_steps = int(round(cfg.duration_s / cfg.dt_s))
    if n_steps + 1 > traj.n_samples:
        raise ValueError("trajectory shorter than the simulation duration")
    if traj.qd is None or traj.qdd is None:
        traj = with_numeric_derivatives(traj)

    if cfg.param_perturbation is not None:
        model = perturb_model(model, cfg.param_perturbation)

    n = model.n_joints
    dt = cfg.dt_s
    limits = np.asarray(model.torque_limit_nm, dtype=float)
    q_ref = traj.q
    qd_ref = traj.qd
    qdd_ref = traj.qdd

    if cfg.initial_state is not None:
        q = np.array(cfg.initial_state.q_rad, dtype=float)
        qd = np.array(cfg.initial_state.qd_rad_s, dtype=float)
    else:
        q = q_ref[0] + np.radians(cfg.initial_offset_deg) * np.ones(n)
        qd = qd_ref[0].copy()

    # per-controller preparation (feedforward profiles are precomputed)
    pid_state = None
    gains = None
    lqr_spec = None
    hybrid = None
    ff_series = None
    open_loop_tau = None
    if isinstance(spec, PidSpec):
        gains = spec.gains
        pid_state = PidState.zero(n)
    elif isinstance(spec, LqrSpec):
        lqr_spec = spec
    elif isinstance(spec, HybridConfig):
        hybrid = spec
        gains = spec.pid
        pid_state = PidState.zero(n)
        lqr_spec = spec.lqr
    elif isinstance(spec, FeedforwardSpec):
        if spec.mode == "open_loop":
            open_loop_tau = np.stack(
                [
                    inverse_dynamics(model, q_ref[i], qd_ref[i], qdd_ref[i])
                    for i in range(n_steps + 1)
                ]
            )
    else:
        raise TypeError(f"unknown controller spec {type(spec).__name__}")
    if lqr_spec is not None:
        if lqr_spec.K.shape != (n, 2 * n):
            raise ValueError(f"LQR gain must be ({n}, {2 * n}), got {lqr_spec.K.shape}")
        if lqr_spec.feedforward == "gravity":
            ff_series = np.stack([gravity_vector(model, q_ref[i]) for i in range(n_steps + 1)])
        elif lqr_spec.feedforward == "inverse_dynamics":
            ff_series = np.stack(
                [
                    inverse_dynamics(model, q_ref[i], qd_ref[i], qdd_ref[i])
                    for i in range(n_steps + 1)
                ]
            )
        else:
            ff_series = np.zeros((n_steps + 1, n))

    t_log = traj.t[: n_steps + 1]
    q_log = np.empty((n_steps + 1, n))
    qd_log = np.empty((n_steps + 1, n))
    tau_log = np.empty((n_steps + 1, n))
    sat_log = np.zeros(n_steps + 1, dtype=bool)
    e_log = np.empty(n_steps + 1)

    dist = cfg.disturbance

    for i in range(n_steps):
        q_log[i] = q
        qd_log[i] = qd
        e_log[i] = total_energy(model, q, qd)

        e = q_ref[i] - q
        e_dot = qd_ref[i] - qd
        if isinstance(spec, PidSpec):
            tau_raw, pid_state = pid_step(gains, pid_state, e, e_dot, dt, tau_limit=limits)
        elif isinstance(spec, LqrSpec):
            x = np.concatenate([q, qd])
            x_ref = np.concatenate([q_ref[i], qd_ref[i]])
            tau_raw = lqr_step(lqr_spec.K, x, x_ref, ff_series[i])
        elif isinstance(spec, HybridConfig):
            tau_pid, pid_state = pid_step(gains, pid_state, e, e_dot, dt, tau_limit=limits)
            x = np.concatenate([q, qd])
            x_ref = np.concatenate([q_ref[i], qd_ref[i]])
            tau_lqr = lqr_step(lqr_spec.K, x, x_ref, ff_series[i])
            tau_raw = hybrid_step(hybrid, tau_lqr, tau_pid)
        else:  # feedforward test controller
            if open_loop_tau is not None:
                tau_raw = open_loop_tau[i]
            else:
                tau_raw = inverse_dynamics(model, q, qd, qdd_ref[i])

        tau = np.clip(tau_raw, -limits, limits)
        sat_log[i] = bool(np.any(np.abs(tau_raw) > limits))
        tau_log[i] = tau

        tau_plant = tau
        if dist is not None:
            t_now = t_log[i]
            if dist.start_s <= t_now < dist.start_s + dist.width_s:
                tau_plant = tau + dist.magnitude_nm

        # RK4 with torque held across the step
        k1_q, k1_v = qd, forward_dynamics(model, q, qd, tau_plant)
        q2, v2 = q + 0.5 * dt * k1_q, qd + 0.5 * dt * k1_v
        k2_q, k2_v = v2, forward_dynamics(model, q2, v2, tau_plant)
        q3, v3 = q + 0.5 * dt * k2_q, qd + 0.5 * dt * k2_v
        k3_q, k3_v = v3, forward_dynamics(model, q3, v3, tau_plant)
        q4, v4 = q + dt * k3_q, qd + dt * k3_v
        k4_q, k4_v = v4, forward_dynamics(model, q4, v4, tau_plant)
        q = q + (dt / 6.0) * (k1_q + 2 * k2_q + 2 * k3_q + k4_q)
        qd = qd + (dt / 6.0) * (k1_v + 2 * k2_v + 2 * k3_v + k4_v)

        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise SimulationDiverged(float(t_log[i + 1]), "non-finite state")
        if np.any(np.abs(q) >= 2 * np.pi):
            raise SimulationDiverged(float(t_log[i + 1]), f"|q| exceeded 2*pi: q={q}")

    q_log[n_steps] = q
    qd_log[n_steps] = qd
    e_log[n_steps] = total_energy(model, q, qd)
    tau_log[n_steps] = tau_log[n_steps - 1]
    sat_log[n_steps] = sat_log[n_steps - 1]

    return SimLog(
        controller=label or _controller_label(spec),
        t=t_log.copy(),
        q=q_log,
        qd=qd_log,
        q_ref=q_ref[: n_steps + 1].copy(),
        qd_ref=qd_ref[: n_steps + 1].copy(),
        tau=tau_log,
        saturated=sat_log,
        energy=e_log,
    )


@dataclass(frozen=True)
class ComparisonResult:
    logs: dict[str, SimLog]
    errors: dict[str, str]


def run_comparison(
    model: ChainModel,
    specs: dict[str, ControllerSpec],
    traj: Trajectory,
    cfg: SimConfig,
) -> ComparisonResult:
    """Simulate every controller under identical conditions.

    A failing controller is recorded in ``errors`` while the others
    still return their logs.
    """
    logs: dict[str, SimLog] = {}
    errors: dict[str, str] = {}
    for name, spec in specs.items():
        try:
            logs[name] = simulate(model, spec, traj, cfg, label=name)
        except (SimulationDiverged, ValueError) as exc:
            log.warning("controller %s failed: %s", name, exc)
            errors[name] = str(exc)
    return ComparisonResult(logs=logs, errors=errors)


# ---------------------------------------------------------------------------
# log serialization


def save_simlog_csv(simlog: SimLog, target) -> None:
    """Write a log as CSV (angles in degrees, torques in N m)."""
    own = not hasattr(target, "write")
    fh = open(target, "w", newline="") if own else target
    try:
        writer = csv.writer(fh)
        writer.writerow(SIMLOG_CSV_HEADER)
        ref_deg = np.degrees(simlog.q_ref[:, _TO_CSV])
        q_deg = np.degrees(simlog.q[:, _TO_CSV])
        tau = simlog.tau[:, _TO_CSV]
        for i in range(simlog.n_samples):
            row = [f"{simlog.t[i]:.6f}"]
            row += [f"{v:.9f}" for v in ref_deg[i]]
            row += [f"{v:.9f}" for v in q_deg[i]]
            row += [f"{v:.9f}" for v in tau[i]]
            row.append(f"{simlog.energy[i]:.9f}")
            writer.writerow(row)
    finally:
        if own:
            fh.close()


def load_simlog_csv(source) -> SimLog:
    """Re-read a CSV written by save_simlog_csv (derivative columns empty)."""
    own = not hasattr(source, "read")
    fh = open(source, newline="") if own else source
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != SIMLOG_CSV_HEADER:
            raise ValueError(f"expected header {','.join(SIMLOG_CSV_HEADER)}")
        data = np.array([[float(c) for c in row] for row in reader if row])
    finally:
        if own:
            fh.close()
    if data.size == 0:
        raise ValueError("empty simulation log file")
    t = data[:, 0]
    q_ref = np.radians(data[:, [3, 2, 1]])
    q = np.radians(data[:, [6, 5, 4]])
    tau = data[:, [9, 8, 7]]
    z = np.zeros_like(q)
    return SimLog(
        controller="loaded",
        t=t,
        q=q,
        qd=z,
        q_ref=q_ref,
        qd_ref=z.copy(),
        tau=tau,
        saturated=np.zeros(t.shape[0], dtype=bool),
        energy=data[:, 10],
    )
