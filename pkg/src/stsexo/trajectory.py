"""Phase-structured sit-to-stand reference trajectories.

Builds smooth joint-angle references through configurable waypoints
(piecewise quintic, zero velocity and acceleration at the motion
endpoints), ingests externally generated trajectories from CSV, and
provides the zero-lag low-pass filtering, resampling, and
differentiation used to condition them.

Angles are radians internally; degrees appear only at file boundaries.
Joint columns follow the chain order (ankle, knee, hip).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import butter, filtfilt

TRAJ_CSV_HEADER = ["time_s", "hip_deg", "knee_deg", "ankle_deg"]

# column order inside trajectory arrays, matching the chain base-to-tip
JOINT_COLUMNS = ("ankle", "knee", "hip")

PHASE_MARKS = (0.33, 0.66)

DEFAULT_WAYPOINTS_DEG = {
    "hip": [(0.0, 88.0), (0.33, 70.0), (0.66, 20.0), (1.0, 2.0)],
    "knee": [(0.0, 98.0), (0.33, 85.0), (0.66, 30.0), (1.0, 3.0)],
    "ankle": [(0.0, 12.0), (0.2, 18.0), (0.66, 10.0), (1.0, 2.0)],
}


class Phase(enum.Enum):
    """Biomechanical phases of the sit-to-stand cycle."""

    FLEXION_MOMENTUM = "flexion_momentum"
    MOMENTUM_TRANSFER = "momentum_transfer"
    EXTENSION = "extension"


def phase_at(t_norm: float) -> Phase:
    """Phase of a normalized time in [0, 1]; boundaries belong to the earlier phase."""
    if not 0.0 <= t_norm <= 1.0:
        raise ValueError(f"normalized time must lie in [0, 1], got {t_norm}")
    if t_norm <= PHASE_MARKS[0]:
        return Phase.FLEXION_MOMENTUM
    if t_norm <= PHASE_MARKS[1]:
        return Phase.MOMENTUM_TRANSFER
    return Phase.EXTENSION


@dataclass(frozen=True)
class Trajectory:
    """Sampled per-joint reference with optional derivative series.

    ``q`` has shape (n_samples, 3) in (ankle, knee, hip) order, radians.
    ``derivative_source`` records whether qd/qdd are analytic (from the
    generating polynomials) or numerically differentiated.
    """

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray | None = None
    qdd: np.ndarray | None = None
    phase_marks: tuple[float, float] = PHASE_MARKS
    derivative_source: str = "none"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)
        if q.ndim != 2 or q.shape[0] != t.shape[0]:
            raise ValueError("q must be (n_samples, n_joints) matching t")
        for name in ("qd", "qdd"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                object.__setattr__(self, name, arr)
                if arr.shape != q.shape:
                    raise ValueError(f"{name} shape must match q")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time base must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def is_uniform(self) -> bool:
        dt = np.diff(self.t)
        return bool(np.max(np.abs(dt - dt[0])) < 1e-9 * max(1.0, dt[0]))

    @property
    def sample_rate_hz(self) -> float:
        if not self.is_uniform:
            raise ValueError("trajectory is not uniformly sampled")
        return float((self.n_samples - 1) / self.duration_s)

    def t_norm(self) -> np.ndarray:
        return (self.t - self.t[0]) / self.duration_s


# ---------------------------------------------------------------------------
# waypoint interpolation


def _quintic_coeffs(T, p0, v0, a0, p1, v1, a1):
    """Quintic polynomial coefficients matching position/velocity/acceleration
    at both segment ends (ascending powers of local time)."""
    A = np.zeros((6, 6))
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    A[2, 2] = 2.0
    powers = T ** np.arange(6, dtype=float)
    A[3] = powers
    A[4] = [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4]
    A[5] = [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3]
    b = np.array([p0, v0, a0, p1, v1, a1], dtype=float)
    return np.linalg.solve(A, b)


def _node_velocities(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Shape-preserving node velocities: zero at ends and local extrema,
    harmonic mean of adjacent secant slopes elsewhere."""
    slopes = np.diff(values) / np.diff(times)
    v = np.zeros(len(times))
    for k in range(1, len(times) - 1):
        s0, s1 = slopes[k - 1], slopes[k]
        if s0 * s1 <= 0.0:
            v[k] = 0.0
        else:
            v[k] = 2.0 * s0 * s1 / (s0 + s1)
    return v


class _PiecewiseQuintic:
    """C2 piecewise quintic through (time, value) nodes, rest-to-rest."""

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        vel = _node_velocities(self.times, self.values)
        self.coeffs = []
        for k in range(len(self.times) - 1):
            T = self.times[k + 1] - self.times[k]
            self.coeffs.append(
                _quintic_coeffs(T, self.values[k], vel[k], 0.0, self.values[k + 1], vel[k + 1], 0.0)
            )

    def eval(self, t: np.ndarray, deriv: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.coeffs) - 1)
        out = np.empty_like(t)
        for k in range(len(self.coeffs)):
            sel = idx == k
            if not np.any(sel):
                continue
            c = np.polynomial.polynomial.polyder(self.coeffs[k], deriv) if deriv else self.coeffs[k]
            out[sel] = np.polynomial.polynomial.polyval(t[sel] - self.times[k], c)
        return out


def generate_sts_reference(
    waypoints_deg: dict[str, Sequence[tuple[float, float]]] | None = None,
    duration_s: float = 3.0,
    rate_hz: float = 1000.0,
) -> Trajectory:
    """Smooth sit-to-stand reference through per-joint waypoints.

    ``waypoints_deg`` maps joint name -> [(t_norm, angle_deg), ...] with
    strictly increasing normalized times covering [0, 1].  The result
    starts and ends at rest (zero velocity and acceleration) and is C2
    throughout; derivative series are analytic from the polynomials.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if rate_hz < 100:
        raise ValueError("sample rate must be at least 100 Hz")
    waypoints_deg = waypoints_deg if waypoints_deg is not None else DEFAULT_WAYPOINTS_DEG
    missing = [j for j in JOINT_COLUMNS if j not in waypoints_deg]
    if missing:
        raise ValueError(f"waypoints missing joints: {missing}")

    n = int(round(duration_s * rate_hz))
    t = np.linspace(0.0, duration_s, n + 1)
    q = np.empty((n + 1, 3))
    qd = np.empty((n + 1, 3))
    qdd = np.empty((n + 1, 3))
    for col, joint in enumerate(JOINT_COLUMNS):
        rows = list(waypoints_deg[joint])
        if len(rows) < 2:
            raise ValueError(f"{joint}: need at least two waypoints")
        times = np.array([r[0] for r in rows], dtype=float) * duration_s
        values = np.radians([r[1] for r in rows])
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"{joint}: waypoint times must be strictly increasing")
        if np.any(np.abs(np.degrees(values)) > 180.0):
            raise ValueError(f"{joint}: waypoint angles must lie within [-180, 180] deg")
        spline = _PiecewiseQuintic(times, values)
        q[:, col] = spline.eval(t)
        qd[:, col] = spline.eval(t, deriv=1)
        qdd[:, col] = spline.eval(t, deriv=2)
    return Trajectory(t=t, q=q, qd=qd, qdd=qdd, derivative_source="analytic")


# ---------------------------------------------------------------------------
# CSV ingestion / export


def load_trajectory_csv(source) -> Trajectory:
    """Parse a trajectory CSV (header time_s,hip_deg,knee_deg,ankle_deg).

    Accepts a path or an open text stream. Times must be strictly
    increasing; at least 4 samples are required. Non-uniform time bases
    are accepted; resample before simulating. Errors cite the offending
    line number (header is line 1).
    """
    if hasattr(source, "read"):
        return _parse_trajectory(source, "<stream>")
    with open(source, newline="") as fh:
        return _parse_trajectory(fh, str(source))


def _parse_trajectory(fh, label: str) -> Trajectory:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{label}: empty trajectory file") from None
    if [h.strip() for h in header] != TRAJ_CSV_HEADER:
        raise ValueError(f"{label}: expected header {','.join(TRAJ_CSV_HEADER)}, got {header}")
    times, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ValueError(f"{label}: line {lineno}: expected 4 columns, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ValueError(f"{label}: line {lineno}: non-numeric value in {row}") from None
        if times and vals[0] <= times[-1]:
            raise ValueError(f"{label}: line {lineno}: time_s not strictly increasing")
        times.append(vals[0])
        rows.append(vals[1:])
    if len(times) < 4:
        raise ValueError(f"{label}: need at least 4 samples, got {len(times)}")
    deg = np.asarray(rows)  # columns hip, knee, ankle
    q = np.radians(deg[:, [2, 1, 0]])  # reorder to (ankle, knee, hip)
    return Trajectory(t=np.asarray(times), q=q, derivative_source="none")


def save_trajectory_csv(traj: Trajectory, target) -> None:
    """Write a trajectory in the same CSV format accepted by the loader."""
    own = not hasattr(target, "write")
    fh = open(target, "w", newline="") if own else target
    try:
        writer = csv.writer(fh)
        writer.writerow(TRAJ_CSV_HEADER)
        deg = np.degrees(traj.q[:, [2, 1, 0]])  # back to hip, knee, ankle
        for ti, row in zip(traj.t, deg):
            writer.writerow([f"{ti:.9f}"] + [f"{v:.9f}" for v in row])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# signal conditioning


def zero_lag_filter(
    signal: np.ndarray, cutoff_hz: float, order: int = 4, rate_hz: float = 1000.0
) -> np.ndarray:
    """Forward-backward Butterworth low-pass with zero net phase.

    ``order`` is the total effective order: each pass applies a
    Butterworth of order/2, so the magnitude response is the squared
    single-pass response (half power at the cutoff). Ends are padded
    with odd reflection, three filter lengths each side.
    """
    signal = np.asarray(signal, dtype=float)
    if order < 2 or order % 2:
        raise ValueError("total filter order must be even and >= 2")
    if cutoff_hz <= 0 or cutoff_hz >= rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist)")
    b, a = butter(order // 2, cutoff_hz / (rate_hz / 2))
    padlen = 3 * max(len(a), len(b))
    if signal.shape[0] <= padlen:
        raise ValueError(f"signal too short to filter: {signal.shape[0]} <= padding {padlen}")
    return filtfilt(b, a, signal, axis=0, padtype="odd", padlen=padlen)


def resample(traj: Trajectory, new_rate_hz: float) -> Trajectory:
    """Cubic-spline resampling onto a uniform grid, endpoints preserved."""
    if new_rate_hz <= 0:
        raise ValueError("new rate must be positive")
    n = int(round(traj.duration_s * new_rate_hz))
    t_new = traj.t[0] + np.linspace(0.0, traj.duration_s, n + 1)
    spline = CubicSpline(traj.t, traj.q, axis=0)
    q = spline(t_new)
    q[0], q[-1] = traj.q[0], traj.q[-1]
    qd = spline(t_new, 1)
    qdd = spline(t_new, 2)
    src = "analytic" if traj.derivative_source == "analytic" else "cubic_spline"
    if traj.derivative_source == "analytic" and traj.qd is not None:
        # keep exact rest endpoints when the source had them
        qd_spline = CubicSpline(traj.t, traj.qd, axis=0)
        qd = qd_spline(t_new)
        qd[0], qd[-1] = traj.qd[0], traj.qd[-1]
        if traj.qdd is not None:
            qdd_spline = CubicSpline(traj.t, traj.qdd, axis=0)
            qdd = qdd_spline(t_new)
            qdd[0], qdd[-1] = traj.qdd[0], traj.qdd[-1]
    return Trajectory(
        t=t_new, q=q, qd=qd, qdd=qdd, phase_marks=traj.phase_marks, derivative_source=src
    )


def differentiate(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration series for a trajectory.

    Analytic derivatives are returned unchanged when the trajectory
    carries them; otherwise central differences (second-order one-sided
    at the ends) are applied to the samples.
    """
    if traj.qd is not None and traj.qdd is not None and traj.derivative_source != "none":
        return traj.qd, traj.qdd
    if traj.n_samples < 5:
        raise ValueError("need at least 5 samples to differentiate")
    qd = np.gradient(traj.q, traj.t, axis=0, edge_order=2)
    qdd = np.gradient(qd, traj.t, axis=0, edge_order=2)
    return qd, qdd


def with_numeric_derivatives(traj: Trajectory) -> Trajectory:
    """Copy of ``traj`` with derivative series filled in (numeric if absent)."""
    qd, qdd = differentiate(traj)
    src = traj.derivative_source if traj.derivative_source != "none" else "numeric"
    return Trajectory(
        t=traj.t, q=traj.q, qd=qd, qdd=qdd, phase_marks=traj.phase_marks, derivative_source=src
    )
