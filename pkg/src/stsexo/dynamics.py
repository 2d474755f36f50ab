"""Closed-form rigid-body dynamics of a fixed-base planar serial chain.

The plant is an ankle-knee-hip chain standing in for a sagittal-plane
lower-limb exoskeleton plus wearer during the sit-to-stand transition.
Each joint is revolute; the foot is welded to the ground. The model
evaluates the manipulator equation

    M(q) qdd + C(q, qd) qd + G(q) = tau

with M assembled from link Jacobians, C from the Christoffel symbols of
M (so that Mdot - 2C is skew-symmetric), and G as the gradient of the
gravitational potential.

Joint angles are flexion-positive with zero at upright stance. The knee
carries a -1 internal sign so that positive knee flexion folds the leg
backward (hip behind the knee when seated) while the equations keep the
standard serial-chain form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

JOINT_NAMES = ("ankle", "knee", "hip")
SEGMENT_NAMES = ("shank", "thigh", "trunk")

# CSV column layout for link parameter tables (lengths in millimetres).
LINK_CSV_HEADER = ["name", "length_mm", "mass_kg", "com_x_m", "com_y_m", "com_z_m"]

DEFAULT_GROUPING = {
    "shank": ["L6", "L7", "L8"],
    "thigh": ["L4", "L5"],
    "trunk": ["L1", "L2", "L3"],
}

DEFAULT_TORQUE_LIMIT_NM = 150.0


class SingularConfigurationError(RuntimeError):
    """Mass matrix too ill-conditioned to invert at this configuration."""


@dataclass(frozen=True)
class LinkParam:
    """One rigid link: geometry and inertia in the link's own frame.

    The link frame sits at the proximal joint with +y along the link
    toward the distal joint and +x pointing forward.  ``length_m`` is the
    proximal-to-distal joint distance (0 for joint connectors),
    ``com_offset_m`` the planar CoM position in that frame, and
    ``inertia_zz_kgm2`` the rotational inertia about the out-of-plane
    axis through the CoM.
    """

    name: str
    length_m: float
    mass_kg: float
    com_offset_m: tuple[float, float]
    inertia_zz_kgm2: float

    def __post_init__(self):
        if self.mass_kg <= 0:
            raise ValueError(f"link {self.name!r}: mass must be positive, got {self.mass_kg}")
        if self.inertia_zz_kgm2 < 0:
            raise ValueError(f"link {self.name!r}: inertia must be non-negative")
        if self.length_m < 0:
            raise ValueError(f"link {self.name!r}: length must be non-negative")
        com = math.hypot(*self.com_offset_m)
        if com > self.length_m + 0.2:
            raise ValueError(
                f"link {self.name!r}: CoM offset {com:.3f} m is implausibly far "
                f"from a link of length {self.length_m:.3f} m"
            )


@dataclass(frozen=True)
class PointMass:
    """Added point mass (payload) at a planar offset in a segment frame."""

    mass_kg: float
    offset_m: tuple[float, float]

    def __post_init__(self):
        if self.mass_kg <= 0:
            raise ValueError(f"payload mass must be positive, got {self.mass_kg}")


@dataclass(frozen=True)
class JointState:
    """Joint angles and velocities, radians and rad/s, flexion-positive."""

    q_rad: np.ndarray
    qd_rad_s: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_rad, dtype=float)
        qd = np.asarray(self.qd_rad_s, dtype=float)
        object.__setattr__(self, "q_rad", q)
        object.__setattr__(self, "qd_rad_s", qd)
        if q.shape != qd.shape:
            raise ValueError("q and qd must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state must be finite")
        if np.any(np.abs(q) >= 2 * np.pi):
            raise ValueError("|q| must stay below 2*pi")


@dataclass(frozen=True)
class ChainModel:
    """Immutable fixed-base planar chain of composite segments.

    ``links`` holds one aggregated LinkParam per segment, ordered base to
    tip.  ``joint_signs`` maps flexion-positive joint angles onto the
    internal serial-chain coordinates (the STS chain uses (+1, -1, +1)
    so knee flexion folds backward).  All dynamics evaluations are pure
    functions of (model, state); models are safe to share across
    concurrent simulations.
    """

    links: tuple[LinkParam, ...]
    gravity_mps2: float = 9.81
    joint_order: tuple[str, ...] = JOINT_NAMES
    torque_limit_nm: tuple[float, ...] = (DEFAULT_TORQUE_LIMIT_NM,) * 3
    joint_signs: tuple[int, ...] = (1, -1, 1)

    # precomputed per-link constants, filled in __post_init__
    _L: np.ndarray = field(default=None, repr=False, compare=False)
    _m: np.ndarray = field(default=None, repr=False, compare=False)
    _I: np.ndarray = field(default=None, repr=False, compare=False)
    _r: np.ndarray = field(default=None, repr=False, compare=False)
    _gamma: np.ndarray = field(default=None, repr=False, compare=False)
    _S: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.links)
        if n == 0:
            raise ValueError("chain needs at least one link")
        if len(self.joint_signs) != n or any(s not in (-1, 1) for s in self.joint_signs):
            raise ValueError("joint_signs must be +/-1, one per joint")
        if len(self.torque_limit_nm) != n:
            raise ValueError("one torque limit per joint required")
        if any(t <= 0 for t in self.torque_limit_nm):
            raise ValueError("torque limits must be positive")
        object.__setattr__(self, "_L", np.array([lk.length_m for lk in self.links]))
        object.__setattr__(self, "_m", np.array([lk.mass_kg for lk in self.links]))
        object.__setattr__(self, "_I", np.array([lk.inertia_zz_kgm2 for lk in self.links]))
        com = np.array([lk.com_offset_m for lk in self.links])
        object.__setattr__(self, "_r", np.hypot(com[:, 0], com[:, 1]))
        # angle of the CoM vector relative to the link axis (+y)
        object.__setattr__(self, "_gamma", np.arctan2(com[:, 0], com[:, 1]))
        object.__setattr__(self, "_S", np.array(self.joint_signs, dtype=float))

    @property
    def n_joints(self) -> int:
        return len(self.links)

    def total_mass(self) -> float:
        return float(self._m.sum())


def _suffix_tables(model: ChainModel, theta: np.ndarray):
    """Return (s, c) with s[i, j] = sum_{k=j..i-1} L_k sin(phi_k) + r_i sin(phi_i + gamma_i).

    phi = cumsum(theta) are absolute link angles from vertical.  Entry
    (i, j) is only meaningful for j <= i.  These suffix sums are the
    building blocks of M, dM/dtheta, G, and V for a planar chain.
    """
    n = model.n_joints
    phi = np.cumsum(theta)
    sin_phi = np.sin(phi)
    cos_phi = np.cos(phi)
    psi = phi + model._gamma
    s = np.zeros((n, n))
    c = np.zeros((n, n))
    for i in range(n):
        acc_s = model._r[i] * math.sin(psi[i])
        acc_c = model._r[i] * math.cos(psi[i])
        s[i, i] = acc_s
        c[i, i] = acc_c
        for j in range(i - 1, -1, -1):
            acc_s += model._L[j] * sin_phi[j]
            acc_c += model._L[j] * cos_phi[j]
            s[i, j] = acc_s
            c[i, j] = acc_c
    return s, c


def _mass_matrix_theta(model: ChainModel, theta: np.ndarray) -> np.ndarray:
    n = model.n_joints
    s, c = _suffix_tables(model, theta)
    M = np.zeros((n, n))
    for j in range(n):
        for l in range(j, n):
            acc = 0.0
            for i in range(l, n):
                acc += model._m[i] * (c[i, j] * c[i, l] + s[i, j] * s[i, l]) + model._I[i]
            M[j, l] = acc
            M[l, j] = acc
    return M


def _mass_matrix_derivs_theta(model: ChainModel, theta: np.ndarray):
    """Mass matrix and its analytic partials dM[h] = dM/dtheta_h."""
    n = model.n_joints
    s, c = _suffix_tables(model, theta)
    M = np.zeros((n, n))
    dM = np.zeros((n, n, n))
    for j in range(n):
        for l in range(j, n):
            acc = 0.0
            for i in range(l, n):
                mi = model._m[i]
                acc += mi * (c[i, j] * c[i, l] + s[i, j] * s[i, l]) + model._I[i]
                for h in range(i + 1):
                    # d c[i,j]/dtheta_h = -s[i, max(j,h)], d s[i,j]/dtheta_h = c[i, max(j,h)]
                    jh = j if j > h else h
                    lh = l if l > h else h
                    dM[h, j, l] += mi * (
                        -s[i, jh] * c[i, l]
                        - c[i, j] * s[i, lh]
                        + c[i, jh] * s[i, l]
                        + s[i, j] * c[i, lh]
                    )
            M[j, l] = acc
            M[l, j] = acc
    for h in range(n):
        dM[h, :, :] = np.triu(dM[h]) + np.triu(dM[h], 1).T
    return M, dM


def _eom_terms(model: ChainModel, q: np.ndarray, qd: np.ndarray):
    """Fused evaluation of (M, C qd, G) sharing one suffix-table pass."""
    S = model._S
    theta = S * q
    thetad = S * qd
    M, dM = _mass_matrix_derivs_theta(model, theta)
    # C qd without forming C: (C qd)_j = 1/2 sum_{l,h}(dM[h,j,l] + dM[l,j,h] - dM[j,l,h]) td_h td_l
    n = model.n_joints
    Cqd = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for l in range(n):
            tl = thetad[l]
            if tl == 0.0:
                continue
            for h in range(n):
                acc += (dM[h, j, l] + dM[l, j, h] - dM[j, l, h]) * thetad[h] * tl
        Cqd[j] = 0.5 * acc
    s, _ = _suffix_tables(model, theta)
    g = model.gravity_mps2
    G = np.empty(n)
    for j in range(n):
        G[j] = -g * sum(model._m[i] * s[i, j] for i in range(j, n))
    SS = np.outer(S, S)
    return M * SS, S * Cqd, S * G


def mass_matrix(model: ChainModel, q: Sequence[float]) -> np.ndarray:
    """Configuration-dependent inertia matrix, symmetric positive-definite."""
    q = np.asarray(q, dtype=float)
    theta = model._S * q
    M = _mass_matrix_theta(model, theta)
    S = model._S
    return M * np.outer(S, S)  # S M S for diagonal S


def coriolis_matrix(model: ChainModel, q: Sequence[float], qd: Sequence[float]) -> np.ndarray:
    """Coriolis/centrifugal matrix from Christoffel symbols of M.

    Built so that Mdot - 2C is skew-symmetric along any trajectory.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    S = model._S
    theta = S * q
    thetad = S * qd
    _, dM = _mass_matrix_derivs_theta(model, theta)
    # Christoffel: C_jl = 1/2 sum_h (dM_h[j,l] + dM_l[j,h] - dM_j[l,h]) thetad_h
    C = 0.5 * (
        np.einsum("hjl,h->jl", dM, thetad)
        + np.einsum("ljh,h->jl", dM, thetad)
        - np.einsum("jlh,h->jl", dM, thetad)
    )
    return C * np.outer(S, S)


def gravity_vector(model: ChainModel, q: Sequence[float]) -> np.ndarray:
    """Gravity torque G(q) = dV/dq for M qdd + C qd + G = tau."""
    q = np.asarray(q, dtype=float)
    theta = model._S * q
    s, _ = _suffix_tables(model, theta)
    n = model.n_joints
    g = model.gravity_mps2
    G = np.zeros(n)
    for j in range(n):
        G[j] = -g * sum(model._m[i] * s[i, j] for i in range(j, n))
    return model._S * G


def potential_energy(model: ChainModel, q: Sequence[float]) -> float:
    """Total gravitational potential, datum at the base joint height."""
    q = np.asarray(q, dtype=float)
    theta = model._S * q
    _, c = _suffix_tables(model, theta)
    return float(model.gravity_mps2 * np.dot(model._m, c[:, 0]))


def kinetic_energy(model: ChainModel, q: Sequence[float], qd: Sequence[float]) -> float:
    qd = np.asarray(qd, dtype=float)
    return float(0.5 * qd @ mass_matrix(model, q) @ qd)


def total_energy(model: ChainModel, q: Sequence[float], qd: Sequence[float]) -> float:
    """Kinetic plus potential mechanical energy, joules."""
    return kinetic_energy(model, q, qd) + potential_energy(model, q)


_COND_LIMIT = 1e12


def forward_dynamics(
    model: ChainModel,
    q: Sequence[float],
    qd: Sequence[float],
    tau: Sequence[float],
) -> np.ndarray:
    """Joint accelerations qdd = M^-1 (tau - C qd - G).

    Raises SingularConfigurationError if cond(M) exceeds 1e12.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    tau = np.asarray(tau, dtype=float)
    M, Cqd, G = _eom_terms(model, q, qd)
    w = np.linalg.eigvalsh(M)
    if w[0] <= 0 or w[-1] / w[0] > _COND_LIMIT:
        raise SingularConfigurationError(
            f"mass matrix condition number {w[-1] / max(w[0], 1e-300):.3e} at q={q}"
        )
    return np.linalg.solve(M, tau - Cqd - G)


def inverse_dynamics(
    model: ChainModel,
    q: Sequence[float],
    qd: Sequence[float],
    qdd: Sequence[float],
) -> np.ndarray:
    """Joint torques tau = M qdd + C qd + G."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    M, Cqd, G = _eom_terms(model, q, qd)
    return M @ qdd + Cqd + G


def forward_kinematics(model: ChainModel, q: Sequence[float]) -> np.ndarray:
    """Planar joint/tip positions, shape (n+1, 2), base at the origin."""
    q = np.asarray(q, dtype=float)
    phi = np.cumsum(model._S * q)
    pts = np.zeros((model.n_joints + 1, 2))
    for i in range(model.n_joints):
        pts[i + 1] = pts[i] + model._L[i] * np.array([math.sin(phi[i]), math.cos(phi[i])])
    return pts


# ---------------------------------------------------------------------------
# chain construction from link tables


def _aggregate_segment(
    name: str,
    members: list[LinkParam],
    payload: PointMass | None,
) -> LinkParam:
    """Combine member links (and optional payload) into one rigid composite.

    Member CoM offsets are taken in the shared segment frame; the
    composite inertia applies the parallel-axis theorem about the
    mass-weighted CoM. Segment length is the longest member length
    (joint connectors contribute mass, not length).
    """
    masses = [lk.mass_kg for lk in members]
    coms = [np.asarray(lk.com_offset_m) for lk in members]
    inertias = [lk.inertia_zz_kgm2 for lk in members]
    if payload is not None:
        masses.append(payload.mass_kg)
        coms.append(np.asarray(payload.offset_m))
        inertias.append(0.0)
    m_total = float(sum(masses))
    com = sum(m * c for m, c in zip(masses, coms)) / m_total
    izz = float(
        sum(i + m * float(np.sum((c - com) ** 2)) for i, m, c in zip(inertias, masses, coms))
    )
    length = max(lk.length_m for lk in members)
    return LinkParam(
        name=name,
        length_m=length,
        mass_kg=m_total,
        com_offset_m=(float(com[0]), float(com[1])),
        inertia_zz_kgm2=izz,
    )


def build_chain(
    link_table: Iterable[LinkParam],
    grouping: dict[str, list[str]] | None = None,
    payload: dict[str, PointMass] | None = None,
    torque_limit_nm: float | Sequence[float] = DEFAULT_TORQUE_LIMIT_NM,
    gravity_mps2: float = 9.81,
    joint_signs: Sequence[int] | None = None,
) -> ChainModel:
    """Aggregate elementary links into chain segments and build the model.

    ``grouping`` maps segment name -> list of link names, ordered base to
    tip (default: shank/thigh/trunk from the standard exoskeleton link
    table; the foot link stays out as the fixed base).  ``payload`` adds
    per-segment point masses representing the wearer.  Single-segment
    groupings are accepted for test chains.
    """
    grouping = grouping if grouping is not None else DEFAULT_GROUPING
    payload = payload or {}
    by_name = {}
    for lk in link_table:
        if lk.name in by_name:
            raise ValueError(f"duplicate link name {lk.name!r}")
        by_name[lk.name] = lk

    segments = []
    for seg_name, member_names in grouping.items():
        if not member_names:
            raise ValueError(f"segment {seg_name!r} has no link assignment")
        missing = [nm for nm in member_names if nm not in by_name]
        if missing:
            raise ValueError(f"segment {seg_name!r} references unknown links: {missing}")
        segments.append(
            _aggregate_segment(seg_name, [by_name[nm] for nm in member_names], payload.get(seg_name))
        )
    for seg_name in payload:
        if seg_name not in grouping:
            raise ValueError(f"payload names unknown segment {seg_name!r}")

    n = len(segments)
    if np.isscalar(torque_limit_nm):
        limits = (float(torque_limit_nm),) * n
    else:
        limits = tuple(float(t) for t in torque_limit_nm)
    if joint_signs is None:
        joint_signs = (1, -1, 1) if n == 3 else (1,) * n
    joint_order = JOINT_NAMES if n == 3 else tuple(f"joint{i + 1}" for i in range(n))
    return ChainModel(
        links=tuple(segments),
        gravity_mps2=gravity_mps2,
        joint_order=joint_order,
        torque_limit_nm=limits,
        joint_signs=tuple(joint_signs),
    )


def slender_rod_inertia(mass_kg: float, length_m: float) -> float:
    return mass_kg * length_m**2 / 12.0


def load_link_table_csv(path) -> list[LinkParam]:
    """Read a link parameter table (lengths in mm, CoM in metres).

    Expected header: name,length_mm,mass_kg,com_x_m,com_y_m,com_z_m.
    The medio-lateral CoM component (z) is dropped for the sagittal
    model. Zero-length rows are joint connectors treated as point
    masses; rows with length get slender-rod inertia about their CoM.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != LINK_CSV_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(LINK_CSV_HEADER)}, got {reader.fieldnames}"
            )
        links = []
        for lineno, row in enumerate(reader, start=2):
            try:
                raw_len = row["length_mm"].strip()
                length_m = 0.0 if raw_len in ("", "---", "--", "-") else float(raw_len) / 1000.0
                mass = float(row["mass_kg"])
                com = (float(row["com_x_m"]), float(row["com_y_m"]))
                inertia = slender_rod_inertia(mass, length_m) if length_m > 0 else 0.0
                links.append(
                    LinkParam(
                        name=row["name"].strip(),
                        length_m=length_m,
                        mass_kg=mass,
                        com_offset_m=com,
                        inertia_zz_kgm2=inertia,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad link row at line {lineno}: {exc}") from exc
    if not links:
        raise ValueError(f"{path}: no link rows found")
    return links


def scale_segment_masses(model: ChainModel, fractions: Sequence[float]) -> ChainModel:
    """New model with segment masses (and inertias, proportionally) scaled by 1+f."""
    if len(fractions) != model.n_joints:
        raise ValueError("one scaling fraction per segment required")
    new_links = []
    for lk, f in zip(model.links, fractions):
        scale = 1.0 + float(f)
        if lk.mass_kg * scale <= 0:
            raise ValueError(f"scaling leaves segment {lk.name!r} with non-positive mass")
        new_links.append(
            replace(lk, mass_kg=lk.mass_kg * scale, inertia_zz_kgm2=lk.inertia_zz_kgm2 * scale)
        )
    return replace(model, links=tuple(new_links))
