"""Control laws: per-joint PID, LQR tracking, and the blended hybrid.

All laws are pure functions of their inputs; PID threads its integrator
and derivative-filter memory through an explicit state value, so
controllers can be cloned and evaluated concurrently with deterministic
results. Saturation to actuator limits happens downstream in the
simulator; the laws here return unsaturated torques so the hybrid blend
combines the raw constituent laws.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger("stsexo.controllers")


@dataclass(frozen=True)
class PidGains:
    """Per-joint PID gains plus derivative filtering and anti-windup limits.

    ``windup_limit_nm`` clamps the integral term k_i * integral;
    ``d_filter_tau_s`` is the first-order low-pass time constant applied
    to the error rate before the derivative gain.
    """

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    d_filter_tau_s: float = 0.01
    windup_limit_nm: float = 300.0

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
        if not (self.kp.shape == self.ki.shape == self.kd.shape):
            raise ValueError("kp, ki, kd must have matching shapes")
        if self.d_filter_tau_s <= 0:
            raise ValueError("derivative filter time constant must be positive")
        if self.windup_limit_nm <= 0:
            raise ValueError("windup limit must be positive")

    @property
    def n_joints(self) -> int:
        return self.kp.shape[0]


@dataclass(frozen=True)
class PidState:
    """Controller memory: error integral, filtered rate, last error sample."""

    integral: np.ndarray
    deriv_filt: np.ndarray
    prev_error: np.ndarray

    @classmethod
    def zero(cls, n_joints: int) -> "PidState":
        z = np.zeros(n_joints)
        return cls(integral=z, deriv_filt=z.copy(), prev_error=z.copy())


def pid_step(
    gains: PidGains,
    state: PidState,
    e: np.ndarray,
    e_dot: np.ndarray,
    dt: float,
    tau_limit: Sequence[float] | None = None,
) -> tuple[np.ndarray, PidState]:
    """One discrete PID update; returns (unsaturated torque, new state).

    The integral advances by the trapezoidal rule and is clamped so the
    integral term stays within the windup limit; when ``tau_limit`` is
    given, integration additionally freezes on joints whose unsaturated
    output exceeds the limit in the direction of the error (conditional
    integration). The derivative acts on the supplied error rate through
    a first-order filter.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(e, dtype=float)
    e_dot = np.asarray(e_dot, dtype=float)

    integral = state.integral + 0.5 * dt * (e + state.prev_error)
    with np.errstate(divide="ignore"):
        bound = np.where(gains.ki > 0, gains.windup_limit_nm / gains.ki, np.inf)
    integral = np.clip(integral, -bound, bound)

    alpha = dt / (gains.d_filter_tau_s + dt)
    deriv = state.deriv_filt + alpha * (e_dot - state.deriv_filt)

    tau = gains.kp * e + gains.ki * integral + gains.kd * deriv

    if tau_limit is not None:
        limit = np.asarray(tau_limit, dtype=float)
        pushing = (np.abs(tau) > limit) & (np.sign(tau) == np.sign(e)) & (e != 0)
        if np.any(pushing):
            integral = np.where(pushing, state.integral, integral)
            tau = gains.kp * e + gains.ki * integral + gains.kd * deriv

    return tau, PidState(integral=integral, deriv_filt=deriv, prev_error=e)


def lqr_step(
    K: np.ndarray, x: np.ndarray, x_ref: np.ndarray, ff: np.ndarray | float = 0.0
) -> np.ndarray:
    """Error-state feedback tau = -K (x - x_ref) + ff."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape or x.shape[0] != K.shape[1]:
        raise ValueError(f"state dimension mismatch: K{K.shape}, x{x.shape}")
    return -K @ (x - x_ref) + ff


def hybrid_step(cfg: "HybridConfig", tau_lqr: np.ndarray, tau_pid: np.ndarray) -> np.ndarray:
    """Blend tau = alpha * tau_lqr + (1 - alpha) * tau_pid (unsaturated)."""
    a = cfg.alpha if isinstance(cfg, HybridConfig) else float(cfg)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {a}")
    tau_lqr = np.asarray(tau_lqr, dtype=float)
    tau_pid = np.asarray(tau_pid, dtype=float)
    if a == 0.0:
        return tau_pid.copy()
    if a == 1.0:
        return tau_lqr.copy()
    return a * tau_lqr + (1.0 - a) * tau_pid


# ---------------------------------------------------------------------------
# controller specifications consumed by the simulator

FEEDFORWARD_MODES = ("none", "gravity", "inverse_dynamics")


@dataclass(frozen=True)
class PidSpec:
    gains: PidGains


@dataclass(frozen=True)
class LqrSpec:
    """Gain matrix over the stacked state [q, qd] plus feedforward choice."""

    K: np.ndarray
    feedforward: str = "gravity"

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        if self.feedforward not in FEEDFORWARD_MODES:
            raise ValueError(f"feedforward must be one of {FEEDFORWARD_MODES}")


@dataclass(frozen=True)
class HybridConfig:
    """Blending coefficient plus the two constituent laws."""

    alpha: float
    pid: PidGains
    lqr: LqrSpec

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class FeedforwardSpec:
    """Model-based test controller validating plant/trajectory consistency.

    ``computed_torque`` evaluates the inverse dynamics at the measured
    state with the reference acceleration; ``open_loop`` replays the
    torque profile computed along the reference.
    """

    mode: str = "computed_torque"

    def __post_init__(self):
        if self.mode not in ("computed_torque", "open_loop"):
            raise ValueError("mode must be computed_torque or open_loop")


ControllerSpec = PidSpec | LqrSpec | HybridConfig | FeedforwardSpec


def per_joint_gain_matrix(k1: Sequence[float], k2: Sequence[float]) -> np.ndarray:
    """Assemble the block-diagonal [diag(k1) diag(k2)] state-feedback matrix."""
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    return np.hstack([np.diag(k1), np.diag(k2)])


# ---------------------------------------------------------------------------
# composite performance index and alpha tuning


@dataclass(frozen=True)
class PerformanceIndex:
    """J = w1 * RMSE_total + w2 * integral of ||tau||^2 dt."""

    w1: float
    w2: float
    rmse_total_rad: float
    torque_energy: float

    @property
    def J(self) -> float:
        return self.w1 * self.rmse_total_rad + self.w2 * self.torque_energy


def performance_index(log, w1: float = 1.0, w2: float = 1e-4) -> PerformanceIndex:
    """Composite tracking-vs-effort index of a simulation log."""
    if w1 < 0 or w2 < 0:
        raise ValueError("weights must be non-negative")
    if log.t.shape[0] == 0:
        raise ValueError("empty simulation log")
    err = log.q_ref - log.q
    rmse = float(np.sqrt(np.mean(err**2)))
    tau_sq = np.sum(log.tau**2, axis=1)
    energy = float(np.trapezoid(tau_sq, log.t))
    return PerformanceIndex(w1=w1, w2=w2, rmse_total_rad=rmse, torque_energy=energy)


@dataclass(frozen=True)
class AlphaCurvePoint:
    alpha: float
    J: float
    rmse_total_rad: float
    torque_energy: float


def tune_alpha(
    run_scenario: Callable[[float], "object"],
    w1: float = 1.0,
    w2: float = 1e-4,
    grid: Sequence[float] | None = None,
) -> tuple[float, list[AlphaCurvePoint]]:
    """Grid-search the blending coefficient on a fixed scenario.

    ``run_scenario`` maps an alpha to a completed simulation log under
    otherwise identical conditions. Returns the J-minimizing alpha (ties
    break toward larger alpha) and the full curve. Any simulation
    failure aborts, naming the offending alpha.
    """
    if grid is None:
        grid = [round(0.05 * i, 2) for i in range(21)]
    grid = list(grid)
    if not grid:
        raise ValueError("alpha grid must be non-empty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha grid must stay within [0, 1]")

    curve: list[AlphaCurvePoint] = []
    best_alpha, best_j = None, np.inf
    for a in sorted(grid):
        try:
            simlog = run_scenario(float(a))
        except Exception as exc:
            raise RuntimeError(f"scenario failed at alpha={a}: {exc}") from exc
        perf = performance_index(simlog, w1, w2)
        curve.append(
            AlphaCurvePoint(
                alpha=float(a),
                J=perf.J,
                rmse_total_rad=perf.rmse_total_rad,
                torque_energy=perf.torque_energy,
            )
        )
        if perf.J <= best_j:
            best_alpha, best_j = float(a), perf.J
    log.info("alpha sweep done: alpha*=%.2f J=%.6g", best_alpha, best_j)
    return best_alpha, curve
