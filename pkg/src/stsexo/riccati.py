"""Plant linearization and continuous-time LQR synthesis.

The continuous algebraic Riccati equation is solved by Newton-Kleinman
iteration: starting from a stabilizing gain, each step solves a
Lyapunov equation for the closed loop and refreshes the gain, which
converges quadratically to the stabilizing solution. Initial gains come
from a cascade of cheap attempts (zero gain if the plant is already
stable, escalating velocity damping, then a Bass-style Lyapunov
initializer).

Per-joint designs use the double-integrator closed form; the general
solver covers coupled multi-joint designs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .dynamics import ChainModel, JointState, forward_dynamics, inverse_dynamics, mass_matrix

log = logging.getLogger("stsexo.riccati")


class RiccatiError(RuntimeError):
    """Riccati solve failed: no stabilizing initializer, divergence, or stagnation."""


@dataclass(frozen=True)
class LinearModel:
    """Linearized plant xdot = A x + B u around an operating point."""

    A: np.ndarray
    B: np.ndarray
    operating_point: JointState

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent dimensions A{A.shape}, B{B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("linear model entries must be finite")


@dataclass(frozen=True)
class LqrDesign:
    """State-feedback design: weights, Riccati solution, and gain.

    Satisfies K = R^-1 B^T P with A - B K Hurwitz; ``care_residual`` is
    the normalized Frobenius residual of the Riccati equation.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    care_residual: float


def care_residual(A, B, Q, R, P) -> float:
    """Normalized Frobenius residual of A'P + PA - PBR^-1B'P + Q."""
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res) / (1.0 + np.linalg.norm(P)))


def is_hurwitz(A: np.ndarray, margin: float = 1e-9) -> bool:
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def _check_weights(Q: np.ndarray, R: np.ndarray) -> None:
    if np.linalg.norm(Q - Q.T) > 1e-10 * (1 + np.linalg.norm(Q)):
        raise ValueError("Q must be symmetric")
    if np.linalg.norm(R - R.T) > 1e-10 * (1 + np.linalg.norm(R)):
        raise ValueError("R must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-10 * (1 + np.linalg.norm(Q)):
        raise ValueError("Q must be positive semidefinite")
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ValueError("R must be positive definite")


def _stabilizing_initial_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Find any K0 with A - B K0 Hurwitz.

    Tries zero gain, then velocity-damping gains c * B^T with c
    escalating tenfold, then a Bass-shift Lyapunov initializer:
    with beta > max Re(eig(A)), solving (A + beta I) W + W (A + beta I)^T
    = 2 B B^T gives K0 = B^T W^-1 stabilizing for controllable (A, B).
    """
    n = A.shape[0]
    if is_hurwitz(A, margin=1e-12):
        return np.zeros((B.shape[1], n))
    c = 1.0
    for _ in range(6):
        K0 = c * B.T
        if is_hurwitz(A - B @ K0, margin=1e-12):
            return K0
        c *= 10.0
    beta = float(np.linalg.norm(A)) + 1.0  # exceeds the spectral radius
    try:
        W = solve_continuous_lyapunov(A + beta * np.eye(n), 2.0 * B @ B.T)
        K0 = np.linalg.solve(W.T, B).T
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"no stabilizing initializer found: {exc}") from exc
    if not is_hurwitz(A - B @ K0, margin=1e-12):
        raise RiccatiError("no stabilizing initializer found (Bass shift failed)")
    return K0


def solve_care(
    A,
    B,
    Q,
    R,
    K0: np.ndarray | None = None,
    tol: float = 1e-13,
    max_iter: int = 50,
) -> np.ndarray:
    """Stabilizing solution of the continuous algebraic Riccati equation.

    Newton-Kleinman: from a stabilizing K_i, solve the Lyapunov equation
    (A - B K_i)' P + P (A - B K_i) = -(Q + K_i' R K_i) and set
    K_{i+1} = R^-1 B' P. Iterates until the normalized residual drops
    below ``tol`` or stops improving; raises RiccatiError if it stays
    above 1e-8.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    _check_weights(Q, R)

    K = _stabilizing_initial_gain(A, B) if K0 is None else np.atleast_2d(np.asarray(K0, float))
    if not is_hurwitz(A - B @ K, margin=1e-12):
        raise RiccatiError("supplied initial gain is not stabilizing")

    P = None
    best = math.inf
    for it in range(max_iter):
        Acl = A - B @ K
        rhs = -(Q + K.T @ R @ K)
        P_new = solve_continuous_lyapunov(Acl.T, rhs)
        P_new = 0.5 * (P_new + P_new.T)
        res = care_residual(A, B, Q, R, P_new)
        if not np.isfinite(res):
            raise RiccatiError(f"Newton-Kleinman diverged at iteration {it}")
        if res < best:
            best, P = res, P_new
        K = np.linalg.solve(R, B.T @ P_new)
        if res < tol:
            break
        if res > best * 10 and it > 3:
            break  # stagnated; keep the best iterate
    if best > 1e-8:
        raise RiccatiError(f"Riccati residual stagnated at {best:.3e} (> 1e-8)")
    log.debug("solve_care converged, residual %.3e", best)
    return P


def lqr_gain(A, B, Q, R, K0: np.ndarray | None = None) -> LqrDesign:
    """Full LQR design with residual and closed-loop stability checks."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = solve_care(A, B, Q, R, K0=K0)
    K = np.linalg.solve(R, B.T @ P)
    res = care_residual(A, B, Q, R, P)
    if res >= 1e-8:
        raise RiccatiError(f"CARE residual {res:.3e} exceeds 1e-8")
    if np.min(np.linalg.eigvalsh(P)) < -1e-10 * (1 + np.linalg.norm(P)):
        raise RiccatiError("Riccati solution is not positive semidefinite")
    if not is_hurwitz(A - B @ K):
        raise RiccatiError("closed loop is not Hurwitz")
    return LqrDesign(A=A, B=B, Q=Q, R=R, P=P, K=K, care_residual=res)


def per_joint_lqr(q_pos: float, q_vel: float, r: float) -> tuple[float, float]:
    """Closed-form double-integrator LQR gains.

    For xdot = [[0,1],[0,0]] x + [0,1]' u with Q = diag(q_pos, q_vel):
    K1 = sqrt(q_pos / r), K2 = sqrt(q_vel / r + 2 K1).
    """
    if r <= 0:
        raise ValueError("control weight must be positive")
    if q_pos < 0 or q_vel < 0:
        raise ValueError("state weights must be non-negative")
    k1 = math.sqrt(q_pos / r)
    k2 = math.sqrt(q_vel / r + 2.0 * k1)
    return k1, k2


def double_integrator() -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return A, B


def linearize(model: ChainModel, op: JointState, step: float = 1e-6) -> LinearModel:
    """Linearize the chain dynamics about an operating point.

    Central finite differences of the forward dynamics around
    (q0, qd0) with the equilibrium torque tau0 = inverse_dynamics(q0,
    qd0, 0); the input matrix is the exact [[0], [M^-1]].
    """
    q0 = np.asarray(op.q_rad, dtype=float)
    qd0 = np.asarray(op.qd_rad_s, dtype=float)
    n = q0.shape[0]
    tau0 = inverse_dynamics(model, q0, qd0, np.zeros(n))

    def acc(q, qd):
        return forward_dynamics(model, q, qd, tau0)

    dfdq = np.zeros((n, n))
    dfdqd = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        dfdq[:, j] = (acc(q0 + e, qd0) - acc(q0 - e, qd0)) / (2 * step)
        dfdqd[:, j] = (acc(q0, qd0 + e) - acc(q0, qd0 - e)) / (2 * step)

    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = dfdq
    A[n:, n:] = dfdqd
    B = np.zeros((2 * n, n))
    B[n:, :] = np.linalg.inv(mass_matrix(model, q0))
    return LinearModel(A=A, B=B, operating_point=op)
