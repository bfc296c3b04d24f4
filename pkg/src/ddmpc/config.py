"""Flat ``key = value`` configuration files.

Controller keys (angles in degrees, converted to radians on load)::

    L, v, q_diag, r_diag, lambda, u_min_deg, u_max_deg, solver_tol, solver_max_iter

``q_diag``/``r_diag`` take one number (times identity) or a comma-separated
diagonal.  Baseline keys carry a ``pid_`` or ``kin_`` prefix and scenario keys
are listed in :data:`SCENARIO_KEYS`.  Blank lines and ``#`` comments are
ignored; unknown or repeated keys are errors.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .baselines import KinMpcConfig, PidConfig
from .controller import DdmpcConfig
from .scenario import ScenarioConfig
from .vehicle import VehicleParams

__all__ = ["ConfigError", "parse_config_text", "load_config", "scenario_from_mapping", "dump_config",
           "DEFAULT_CONFIG_TEXT"]


class ConfigError(ValueError):
    """Malformed or invalid configuration; ``lineno`` is set for syntax errors."""

    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.lineno = lineno


def _deg(x):
    return math.radians(float(x))


def _diag(text):
    vals = [float(p) for p in text.split(",") if p.strip()]
    if not vals:
        raise ValueError("empty list")
    return vals[0] if len(vals) == 1 else np.array(vals)


# key -> (section, field, converter)
DDMPC_KEYS = {
    "L": ("ddmpc", "L", int),
    "v": ("ddmpc", "v", int),
    "q_diag": ("ddmpc", "Q", _diag),
    "r_diag": ("ddmpc", "R", _diag),
    "lambda": ("ddmpc", "lam", float),
    "u_min_deg": ("ddmpc", "u_min", _deg),
    "u_max_deg": ("ddmpc", "u_max", _deg),
    "solver_tol": ("ddmpc", "solver_tol", float),
    "solver_max_iter": ("ddmpc", "solver_max_iter", int),
    "relax_weight": ("ddmpc", "relax_weight", float),
}
PID_KEYS = {
    "pid_kp": ("pid", "kp", float),
    "pid_ki": ("pid", "ki", float),
    "pid_kd": ("pid", "kd", float),
    "pid_k_heading": ("pid", "k_heading", float),
    "pid_integral_limit_deg": ("pid", "integral_limit", _deg),
    "pid_u_min_deg": ("pid", "u_min", _deg),
    "pid_u_max_deg": ("pid", "u_max", _deg),
}
KIN_KEYS = {
    "kin_horizon": ("kin_mpc", "horizon", int),
    "kin_q_lateral": ("kin_mpc", "q_lateral", float),
    "kin_q_heading": ("kin_mpc", "q_heading", float),
    "kin_r": ("kin_mpc", "r", float),
    "kin_u_min_deg": ("kin_mpc", "u_min", _deg),
    "kin_u_max_deg": ("kin_mpc", "u_max", _deg),
    "kin_solver_tol": ("kin_mpc", "solver_tol", float),
    "kin_solver_max_iter": ("kin_mpc", "solver_max_iter", int),
}
SCENARIO_KEYS = {
    "name": ("scenario", "name", str),
    "lane_offset": ("scenario", "lane_offset", float),
    "s1": ("scenario", "s1", float),
    "s2": ("scenario", "s2", float),
    "s3": ("scenario", "s3", float),
    "s4": ("scenario", "s4", float),
    "total_length": ("scenario", "total_length", float),
    "dt": ("scenario", "dt", float),
    "n_data": ("scenario", "n_data", int),
    "excitation": ("scenario", "excitation", str),
    "excitation_amplitude_deg": ("scenario", "excitation_amplitude", _deg),
    "excitation_mismatch": ("scenario", "excitation_mismatch", float),
    "excitation_hold": ("scenario", "excitation_hold", int),
    "excitation_corner": ("scenario", "excitation_corner", float),
    "outlier_z": ("scenario", "outlier_z", float),
    "seed": ("scenario", "seed", int),
    "speed": ("vehicle", "speed", float),
    "wheelbase": ("vehicle", "wheelbase", float),
    "sprung_mass": ("vehicle", "sprung_mass", float),
    "yaw_inertia": ("vehicle", "yaw_inertia", float),
    "track_width": ("vehicle", "track_width", float),
}
ALL_KEYS = {**DDMPC_KEYS, **PID_KEYS, **KIN_KEYS, **SCENARIO_KEYS}


def parse_config_text(text, path=None):
    """Parse ``key = value`` lines into a dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno, path)
        out[key] = (value, lineno)
    return out


def scenario_from_mapping(values, path=None):
    """Build a :class:`ScenarioConfig` from parsed values, defaults elsewhere."""
    sections = {"ddmpc": {}, "pid": {}, "kin_mpc": {}, "scenario": {}, "vehicle": {}}
    for key, (value, lineno) in values.items():
        section, field, conv = ALL_KEYS[key]
        try:
            sections[section][field] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
    try:
        return ScenarioConfig(
            **sections["scenario"],
            vehicle=VehicleParams(**sections["vehicle"]),
            ddmpc=DdmpcConfig(**sections["ddmpc"]),
            pid=PidConfig(**sections["pid"]),
            kin_mpc=KinMpcConfig(**sections["kin_mpc"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path) from None


def load_config(path=None):
    """Read a config file; ``None`` gives the built-in defaults."""
    if path is None:
        return ScenarioConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    return scenario_from_mapping(parse_config_text(text, path), path)


def _fmt_value(v, deg=False):
    if isinstance(v, np.ndarray):
        return ", ".join(repr(float(x)) for x in (np.degrees(v) if deg else v))
    if deg:
        return repr(math.degrees(v))
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg):
    """Config text that loads back to ``cfg`` up to degree/radian rounding."""
    objs = {"ddmpc": cfg.ddmpc, "pid": cfg.pid, "kin_mpc": cfg.kin_mpc, "scenario": cfg, "vehicle": cfg.vehicle}
    lines = []
    for key, (section, field, conv) in ALL_KEYS.items():
        v = getattr(objs[section], field)
        if isinstance(v, np.ndarray) and v.ndim > 1:
            v = np.diag(v)
        lines.append(f"{key} = {_fmt_value(v, deg=conv is _deg)}")
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG_TEXT = """\
# Default dual lane switch comparison.
# Angles in degrees; everything else SI.

# data-driven controller
L = 24
v = 6
q_diag = 1.0
r_diag = 0.01
lambda = 0.001
u_min_deg = -5.0
u_max_deg = 5.0
# tighter alternative:
# u_min_deg = -1.5
# u_max_deg = 1.5
solver_tol = 1e-8
solver_max_iter = 200

# PID (grid-searched on this scenario)
pid_kp = 32.0
pid_ki = 0.0
pid_kd = 0.1
pid_k_heading = 10.0
pid_integral_limit_deg = 2.0
pid_u_min_deg = -5.0
pid_u_max_deg = 5.0

# kinematic MPC
kin_horizon = 30
kin_q_lateral = 1.0
kin_q_heading = 1.0
kin_r = 0.02
kin_u_min_deg = -5.0
kin_u_max_deg = 5.0

# scenario
name = dual_lane_switch
lane_offset = 3.5
s1 = 50
s2 = 90
s3 = 140
s4 = 180
total_length = 250
dt = 0.05
speed = 10.0
wheelbase = 2.91
n_data = 646
excitation = multisine
excitation_amplitude_deg = 3.0
excitation_mismatch = 0.1
excitation_corner = 0.02
outlier_z = inf
seed = 0
"""

