"""Run configuration: YAML loading, validation, and default assets."""

from __future__ import annotations

import copy
import hashlib
import logging
import math
import os
from pathlib import Path

import yaml

log = logging.getLogger("stsexo.config")

_DATA_DIR = Path(__file__).parent / "data"


class ConfigError(ValueError):
    """Invalid run configuration; message lists every violation found."""


def packaged_data_path(name: str) -> Path:
    """Absolute path of a data file shipped inside the package."""
    p = _DATA_DIR / name
    if not p.exists():
        raise FileNotFoundError(f"no packaged data file {name!r}")
    return p


def default_config_path() -> Path:
    return packaged_data_path("default_config.yaml")


def load_config(path: str | os.PathLike | None = None) -> dict:
    """Load and validate a run configuration.

    ``None`` loads the packaged default. Relative paths inside the file
    (link_csv, trajectory csv) are resolved against the config file's
    directory. Raises ConfigError listing every violation.
    """
    cfg_path = Path(path) if path is not None else default_config_path()
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    with open(cfg_path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{cfg_path}: top level must be a mapping")
    cfg = validate_config(raw, base_dir=cfg_path.parent)
    return cfg


def dump_config(cfg: dict) -> str:
    """Canonical YAML re-emission of a validated config."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:12]


def _resolve_path(value: str, base_dir: Path) -> str:
    if value.startswith("builtin:"):
        return str(packaged_data_path(value.split(":", 1)[1]))
    p = Path(value)
    if not p.is_absolute():
        p = base_dir / p
    return str(p)


_JOINTS = ("hip", "knee", "ankle")
_SEGMENTS = ("shank", "thigh", "trunk")


def _joint_map(node, name, errors, positive=False):
    """Validate a {hip, knee, ankle} -> number mapping, return dict or None."""
    if not isinstance(node, dict) or set(node) != set(_JOINTS):
        errors.append(f"{name}: expected mapping with keys hip, knee, ankle")
        return None
    out = {}
    for j in _JOINTS:
        v = node[j]
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            errors.append(f"{name}.{j}: expected finite number")
            return None
        if positive and v <= 0:
            errors.append(f"{name}.{j}: must be positive")
            return None
        out[j] = float(v)
    return out


def validate_config(raw: dict, base_dir: Path | None = None) -> dict:
    """Check every field against its module preconditions; resolve paths.

    Returns a normalized deep copy. Collects all violations before
    raising so a bad file is diagnosed in one pass.
    """
    base_dir = base_dir or Path.cwd()
    cfg = copy.deepcopy(raw)
    errors: list[str] = []

    for section in ("model", "trajectory", "controllers", "sim", "metrics", "tuning", "output"):
        if section not in cfg or not isinstance(cfg[section], dict):
            errors.append(f"missing section: {section}")
            cfg.setdefault(section, {})

    model = cfg["model"]
    link_csv = model.get("link_csv", "builtin:link_params.csv")
    try:
        model["link_csv"] = _resolve_path(str(link_csv), base_dir)
        if not Path(model["link_csv"]).exists():
            errors.append(f"model.link_csv: file not found: {model['link_csv']}")
    except FileNotFoundError as exc:
        errors.append(f"model.link_csv: {exc}")
    grouping = model.get("grouping")
    if not isinstance(grouping, dict) or set(grouping) != set(_SEGMENTS):
        errors.append("model.grouping: expected mapping with keys shank, thigh, trunk")
    else:
        for seg, members in grouping.items():
            if not isinstance(members, list) or not members:
                errors.append(f"model.grouping.{seg}: expected non-empty list of link names")
    g = model.get("gravity_mps2", 9.81)
    if not isinstance(g, (int, float)) or g <= 0:
        errors.append("model.gravity_mps2: must be positive")
    model["gravity_mps2"] = float(g) if isinstance(g, (int, float)) else 9.81
    lim = model.get("torque_limit_nm", 150.0)
    if isinstance(lim, (int, float)):
        if lim <= 0:
            errors.append("model.torque_limit_nm: must be positive")
        model["torque_limit_nm"] = float(lim)
    else:
        got = _joint_map(lim, "model.torque_limit_nm", errors, positive=True)
        if got:
            model["torque_limit_nm"] = got
    payload = model.get("payload", {})
    if payload:
        body = payload.get("body_mass_kg", 75.0)
        if not isinstance(body, (int, float)) or body <= 0:
            errors.append("model.payload.body_mass_kg: must be positive")
        fr = payload.get("fractions", {})
        off = payload.get("offsets_m", {})
        if not isinstance(fr, dict) or set(fr) != set(_SEGMENTS):
            errors.append("model.payload.fractions: expected keys shank, thigh, trunk")
        else:
            for seg, v in fr.items():
                if not isinstance(v, (int, float)) or v < 0:
                    errors.append(f"model.payload.fractions.{seg}: must be >= 0")
        if not isinstance(off, dict) or set(off) != set(_SEGMENTS):
            errors.append("model.payload.offsets_m: expected keys shank, thigh, trunk")
        else:
            for seg, v in off.items():
                if not (isinstance(v, list) and len(v) == 2):
                    errors.append(f"model.payload.offsets_m.{seg}: expected [x, y] pair")

    traj = cfg["trajectory"]
    source = traj.get("source", "generated")
    if source not in ("generated", "csv"):
        errors.append("trajectory.source: must be 'generated' or 'csv'")
    if source == "csv":
        p = traj.get("csv_path")
        if not p:
            errors.append("trajectory.csv_path: required when source is 'csv'")
        else:
            traj["csv_path"] = _resolve_path(str(p), base_dir)
            if not Path(traj["csv_path"]).exists():
                errors.append(f"trajectory.csv_path: file not found: {traj['csv_path']}")
    dur = traj.get("duration_s", 3.0)
    if not isinstance(dur, (int, float)) or dur <= 0:
        errors.append("trajectory.duration_s: must be positive")
    rate = traj.get("rate_hz", 1000)
    if not isinstance(rate, (int, float)) or rate < 100:
        errors.append("trajectory.rate_hz: must be >= 100")
    wp = traj.get("waypoints")
    if source == "generated":
        if not isinstance(wp, dict) or set(wp) != set(_JOINTS):
            errors.append("trajectory.waypoints: expected mapping with keys hip, knee, ankle")
        else:
            for j, rows in wp.items():
                ok = isinstance(rows, list) and len(rows) >= 2
                ok = ok and all(isinstance(r, list) and len(r) == 2 for r in rows)
                if not ok:
                    errors.append(f"trajectory.waypoints.{j}: expected list of [t_norm, degrees]")
                    continue
                ts = [r[0] for r in rows]
                if sorted(ts) != ts or len(set(ts)) != len(ts):
                    errors.append(f"trajectory.waypoints.{j}: times must be strictly increasing")
                if any(not -180.0 <= r[1] <= 180.0 for r in rows):
                    errors.append(f"trajectory.waypoints.{j}: angles must lie in [-180, 180] deg")
    filt = traj.setdefault("filter", {})
    cutoff = filt.setdefault("cutoff_hz", 6.0)
    order = filt.setdefault("order", 4)
    filt.setdefault("enabled", "auto")
    if not isinstance(cutoff, (int, float)) or cutoff <= 0:
        errors.append("trajectory.filter.cutoff_hz: must be positive")
    elif isinstance(rate, (int, float)) and cutoff >= rate / 2:
        errors.append("trajectory.filter.cutoff_hz: must be below Nyquist")
    if not isinstance(order, int) or order < 2 or order % 2:
        errors.append("trajectory.filter.order: must be an even integer >= 2")
    if filt["enabled"] not in ("auto", True, False):
        errors.append("trajectory.filter.enabled: must be auto, true, or false")

    ctrl = cfg["controllers"]
    for name in ("pid", "lqr", "hybrid"):
        if name not in ctrl or not isinstance(ctrl[name], dict):
            errors.append(f"controllers.{name}: section required")
            ctrl.setdefault(name, {})
    pid = ctrl["pid"]
    for field in ("kp", "ki", "kd"):
        got = _joint_map(pid.get(field), f"controllers.pid.{field}", errors)
        if got and any(v < 0 for v in got.values()):
            errors.append(f"controllers.pid.{field}: gains must be >= 0")
    for blk, label in ((pid, "pid"), (ctrl["hybrid"], "hybrid")):
        scale = blk.setdefault("gain_scale", 1.0)
        if isinstance(scale, (int, float)):
            if scale <= 0:
                errors.append(f"controllers.{label}.gain_scale: must be positive")
        else:
            got = _joint_map(scale, f"controllers.{label}.gain_scale", errors, positive=True)
            if got:
                blk["gain_scale"] = got
        tau_d = blk.setdefault("d_filter_tau_s", 0.01)
        if not isinstance(tau_d, (int, float)) or tau_d <= 0:
            errors.append(f"controllers.{label}.d_filter_tau_s: must be positive")
        windup = blk.setdefault("windup_limit_nm", 300.0)
        if not isinstance(windup, (int, float)) or windup <= 0:
            errors.append(f"controllers.{label}.windup_limit_nm: must be positive")
    lqr = ctrl["lqr"]
    for field in ("q_pos", "q_vel"):
        got = _joint_map(lqr.get(field), f"controllers.lqr.{field}", errors)
        if got and any(v < 0 for v in got.values()):
            errors.append(f"controllers.lqr.{field}: weights must be >= 0")
    _joint_map(lqr.get("r"), "controllers.lqr.r", errors, positive=True)
    wscale = lqr.setdefault("weight_scale", 1.0)
    if not isinstance(wscale, (int, float)) or wscale <= 0:
        errors.append("controllers.lqr.weight_scale: must be positive")
    if lqr.setdefault("feedforward", "gravity") not in ("none", "gravity", "inverse_dynamics"):
        errors.append("controllers.lqr.feedforward: must be none, gravity, or inverse_dynamics")
    if lqr.setdefault("mode", "per_joint") not in ("per_joint", "coupled"):
        errors.append("controllers.lqr.mode: must be per_joint or coupled")
    hybrid = ctrl["hybrid"]
    alpha = hybrid.get("alpha", 0.65)
    if not isinstance(alpha, (int, float)) or not 0.0 <= alpha <= 1.0:
        errors.append("controllers.hybrid.alpha: must lie in [0, 1]")
    else:
        hybrid["alpha"] = float(alpha)
    for field in ("kp", "ki", "kd"):
        _joint_map(hybrid.get(field), f"controllers.hybrid.{field}", errors)

    sim = cfg["sim"]
    dt = sim.setdefault("dt_s", 1e-3)
    if not isinstance(dt, (int, float)) or dt <= 0:
        errors.append("sim.dt_s: must be positive")
    sdur = sim.setdefault("duration_s", 3.0)
    if not isinstance(sdur, (int, float)) or (isinstance(dt, (int, float)) and dt > 0 and sdur < dt):
        errors.append("sim.duration_s: must be >= dt_s")
    off = sim.setdefault("initial_offset_deg", 0.0)
    if not isinstance(off, (int, float)):
        errors.append("sim.initial_offset_deg: must be a number")
    dist = sim.setdefault("disturbance", None)
    if dist is not None:
        if not isinstance(dist, dict):
            errors.append("sim.disturbance: expected mapping or null")
        else:
            for key in ("start_s", "width_s"):
                v = dist.get(key)
                if not isinstance(v, (int, float)) or v < 0:
                    errors.append(f"sim.disturbance.{key}: must be >= 0")
            _joint_map(dist.get("magnitude_nm"), "sim.disturbance.magnitude_nm", errors)
    pert = sim.setdefault("mass_perturbation", None)
    if pert is not None:
        if not isinstance(pert, dict) or set(pert) != set(_SEGMENTS):
            errors.append("sim.mass_perturbation: expected keys shank, thigh, trunk or null")
        else:
            for seg, v in pert.items():
                if not isinstance(v, (int, float)) or abs(v) > 0.5:
                    errors.append(f"sim.mass_perturbation.{seg}: |fraction| must be <= 0.5")

    met = cfg["metrics"]
    band = met.setdefault("settling_band_pct", 2.0)
    if not isinstance(band, (int, float)) or band <= 0:
        errors.append("metrics.settling_band_pct: must be positive")
    if met.setdefault("improvement_baseline", "pid") not in ("pid", "lqr", "hybrid"):
        errors.append("metrics.improvement_baseline: must name a controller")

    tuning = cfg["tuning"]
    for key, default in (("w1", 1.0), ("w2", 1.0e-4)):
        v = tuning.setdefault(key, default)
        if not isinstance(v, (int, float)) or v < 0:
            errors.append(f"tuning.{key}: must be >= 0")
    grid = tuning.setdefault("grid", "0:1:0.05")
    if isinstance(grid, str):
        try:
            parse_grid(grid)
        except ValueError as exc:
            errors.append(f"tuning.grid: {exc}")
    elif not (isinstance(grid, list) and grid and all(isinstance(a, (int, float)) for a in grid)):
        errors.append("tuning.grid: expected 'a:b:step' or a list of alphas")

    out = cfg["output"]
    out.setdefault("directory", "out")

    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return cfg


def parse_grid(spec: str) -> list[float]:
    """Parse an 'a:b:step' alpha grid specification."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected a:b:step, got {spec!r}")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"non-numeric grid bounds in {spec!r}") from None
    if step <= 0 or b < a:
        raise ValueError(f"need step > 0 and b >= a in {spec!r}")
    n = int(round((b - a) / step))
    grid = [a + i * step for i in range(n + 1)]
    grid = [round(x, 10) for x in grid if x <= b + 1e-12]
    if not all(0.0 <= x <= 1.0 for x in grid):
        raise ValueError(f"alpha grid must stay within [0, 1]: {spec!r}")
    return grid


def setup_logging() -> None:
    """Configure the package logger from the STSEXO_LOG_LEVEL env var."""
    level_name = os.environ.get("STSEXO_LOG_LEVEL", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("stsexo").setLevel(level)
