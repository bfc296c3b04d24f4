"""Dual lane switch scenario, closed-loop runs and controller comparison."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import KinematicMPC, KinMpcConfig, PidConfig, PIDSteering
from .controller import DDMPCController, DdmpcConfig
from .qp import CONVERGED
from .trajectory import preprocess
from .vehicle import SteerCommand, VehicleParams, VehicleState, collect_open_loop, make_excitation, step, wrap_angle

__all__ = [
    "ReferencePath",
    "RunReport",
    "ScenarioConfig",
    "make_dual_lane_switch",
    "collect_dictionary_data",
    "run_closed_loop",
    "compare_controllers",
    "tune_pid",
    "REPORT_HEADER",
]

log = logging.getLogger(__name__)

REPORT_HEADER = [
    "step", "t", "x_ref", "y_ref", "phi_ref", "x", "y", "phi",
    "delta_l", "delta_r", "lat_err", "solve_ms", "status",
]
DIVERGENCE_LIMIT = 10.0  # m


def _quintic(t):
    """Smooth step on [0, 1] with zero slope and curvature at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _quintic_d1(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t**2 * (1.0 - t) ** 2, 0.0)


def _quintic_d2(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


@dataclass(frozen=True)
class ReferencePath:
    """Centerline sampled every ``speed * dt`` metres of arc length.

    ``phi`` is the direction of the central difference of neighbouring
    points; ``kappa`` is the analytic curvature at each point.
    """

    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    kappa: np.ndarray
    lane_offset: float
    stations: tuple
    spacing: float

    def __len__(self):
        return self.x.shape[0]

    def lateral(self, x):
        """Analytic centerline offset y(x)."""
        s1, s2, s3, s4 = self.stations
        x = np.asarray(x, dtype=float)
        up = _quintic((x - s1) / (s2 - s1))
        down = _quintic((x - s3) / (s4 - s3))
        return self.lane_offset * (up - down)

    def slope(self, x):
        s1, s2, s3, s4 = self.stations
        x = np.asarray(x, dtype=float)
        return self.lane_offset * (
            _quintic_d1((x - s1) / (s2 - s1)) / (s2 - s1) - _quintic_d1((x - s3) / (s4 - s3)) / (s4 - s3)
        )

    def curvature_at(self, x):
        s1, s2, s3, s4 = self.stations
        x = np.asarray(x, dtype=float)
        y2 = self.lane_offset * (
            _quintic_d2((x - s1) / (s2 - s1)) / (s2 - s1) ** 2
            - _quintic_d2((x - s3) / (s4 - s3)) / (s4 - s3) ** 2
        )
        return y2 / (1.0 + self.slope(x) ** 2) ** 1.5

    def heading_at(self, x):
        """Analytic tangent heading of the centerline at abscissa ``x``."""
        return np.arctan(self.slope(x))

    def sample(self, s):
        """Points at arc lengths ``s``; beyond either end the path continues straight."""
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.s, self.x)
        y = np.interp(s, self.s, self.y)
        phi = np.interp(s, self.s, self.phi)
        kappa = np.interp(s, self.s, self.kappa)
        for mask, i in ((s > self.s[-1], -1), (s < self.s[0], 0)):
            if np.any(mask):
                ds = s[mask] - self.s[i]
                x[mask] = self.x[i] + ds * math.cos(self.phi[i])
                y[mask] = self.y[i] + ds * math.sin(self.phi[i])
                phi[mask] = self.phi[i]
                kappa[mask] = 0.0
        return x, y, phi, kappa

    def project(self, px, py):
        """Arc length of the projection of (px, py), its heading, and the signed lateral error.

        The point is projected onto the segment before and after its nearest
        sample and the closer foot is kept.  The end segments extend
        indefinitely, so points beyond the path still project onto it.  The
        lateral error is positive when the point lies left of the path.
        """
        n = len(self)
        i = int(np.argmin((self.x - px) ** 2 + (self.y - py) ** 2))
        best = None
        for j in (i - 1, i):
            if j < 0 or j + 1 >= n:
                continue
            ex, ey = self.x[j + 1] - self.x[j], self.y[j + 1] - self.y[j]
            t = ((px - self.x[j]) * ex + (py - self.y[j]) * ey) / (ex * ex + ey * ey)
            lo = -math.inf if j == 0 else 0.0
            hi = math.inf if j + 2 == n else 1.0
            t = min(max(t, lo), hi)
            cx, cy = self.x[j] + t * ex, self.y[j] + t * ey
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            if best is None or d2 < best[0]:
                best = (d2, j, t, ex, ey, cx, cy)
        _, j, t, ex, ey, cx, cy = best
        s = self.s[j] + t * (self.s[j + 1] - self.s[j])
        lat = (-(px - cx) * ey + (py - cy) * ex) / math.hypot(ex, ey)
        if self.s[0] <= s <= self.s[-1]:
            phi_ref = float(np.interp(s, self.s, self.phi))
        else:
            phi_ref = math.atan2(ey, ex)
        return s, phi_ref, lat, (cx, cy)


def make_dual_lane_switch(lane_offset=3.5, s1=50.0, s2=90.0, s3=140.0, s4=180.0,
                          total_length=250.0, dt=0.05, speed=10.0):
    """Reference for a move to the adjacent lane and back.

    Stations are x-coordinates: straight until ``s1``, quintic rise to
    ``lane_offset`` by ``s2``, hold until ``s3``, quintic return by ``s4``,
    straight until ``total_length``.
    """
    if not 0 < s1 < s2 < s3 < s4 < total_length:
        raise ValueError(
            f"stations must satisfy 0 < s1 < s2 < s3 < s4 < total_length, got "
            f"{s1}, {s2}, {s3}, {s4}, {total_length}"
        )
    spacing = speed * dt
    proto = ReferencePath(
        x=np.zeros(1), y=np.zeros(1), phi=np.zeros(1), s=np.zeros(1), kappa=np.zeros(1),
        lane_offset=float(lane_offset), stations=(s1, s2, s3, s4), spacing=spacing,
    )
    # arc length on a fine grid by Simpson's rule on each cell
    xf = np.linspace(0.0, total_length, int(total_length / 0.01) + 1)
    mid = 0.5 * (xf[1:] + xf[:-1])
    speed_x = lambda x: np.sqrt(1.0 + proto.slope(x) ** 2)  # noqa: E731
    cell = (xf[1:] - xf[:-1]) / 6.0 * (speed_x(xf[:-1]) + 4.0 * speed_x(mid) + speed_x(xf[1:]))
    sf = np.concatenate([[0.0], np.cumsum(cell)])
    s = np.arange(0.0, sf[-1] + 1e-9, spacing)
    x = np.interp(s, sf, xf)
    # one Newton correction per point to land on the exact arc length
    x = x + (s - np.interp(x, xf, sf)) / speed_x(x)
    y = proto.lateral(x)
    xp = np.concatenate([[x[0] - spacing], x, [x[-1] + spacing]])
    yp = np.concatenate([[y[0]], y, [y[-1]]])
    phi = np.arctan2(yp[2:] - yp[:-2], xp[2:] - xp[:-2])
    kappa = proto.curvature_at(x)
    return ReferencePath(
        x=x, y=y, phi=phi, s=s, kappa=kappa, lane_offset=float(lane_offset),
        stations=(s1, s2, s3, s4), spacing=spacing,
    )


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a comparison run."""

    name: str = "dual_lane_switch"
    lane_offset: float = 3.5
    s1: float = 50.0
    s2: float = 90.0
    s3: float = 140.0
    s4: float = 180.0
    total_length: float = 250.0
    dt: float = 0.05
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    n_data: int = 646
    excitation: str = "multisine"
    excitation_amplitude: float = math.radians(3.0)
    excitation_mismatch: float = 0.1
    excitation_hold: int = 1
    excitation_corner: float = 0.02
    outlier_z: float = math.inf
    seed: int = 0
    ddmpc: DdmpcConfig = field(default_factory=DdmpcConfig)
    pid: PidConfig = field(default_factory=PidConfig)
    kin_mpc: KinMpcConfig = field(default_factory=KinMpcConfig)

    def __post_init__(self):
        if not 0 < self.s1 < self.s2 < self.s3 < self.s4 < self.total_length:
            raise ValueError("stations must satisfy 0 < s1 < s2 < s3 < s4 < total_length")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_data < 1 or self.excitation_hold < 1:
            raise ValueError("n_data and excitation_hold must be >= 1")
        if self.excitation not in ("prbs", "multisine", "chirp"):
            raise ValueError(f"unknown excitation kind {self.excitation!r}")

    def path(self):
        return make_dual_lane_switch(
            self.lane_offset, self.s1, self.s2, self.s3, self.s4,
            self.total_length, self.dt, self.vehicle.speed,
        )


def collect_dictionary_data(cfg, seed=None):
    """Open-loop excitation of the plant, cleaned and resampled."""
    seed = cfg.seed if seed is None else seed
    exc = make_excitation(
        cfg.excitation, cfg.n_data, cfg.excitation_amplitude, seed=seed,
        mismatch=cfg.excitation_mismatch, hold=cfg.excitation_hold,
        corner=cfg.excitation_corner,
    )
    raw = collect_open_loop(cfg.vehicle, exc, cfg.dt)
    return preprocess(raw, cfg.dt, cfg.outlier_z)


@dataclass
class RunReport:
    controller: str
    records: list
    aborted: bool = False
    message: str = ""

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=float)

    @property
    def summary(self):
        e = self.column("lat_err") if self.records else np.zeros(0)
        ms = self.column("solve_ms") if self.records else np.zeros(0)
        ms = ms[np.isfinite(ms)]
        nan = float("nan")
        return {
            "controller": self.controller,
            "steps": len(self.records),
            "rms_err": float(np.sqrt(np.mean(e**2))) if e.size else nan,
            "max_abs_err": float(np.max(np.abs(e))) if e.size else nan,
            "max_err": float(np.max(e)) if e.size else nan,
            "min_err": float(np.min(e)) if e.size else nan,
            "mean_ms": float(np.mean(ms)) if ms.size else nan,
            "median_ms": float(np.median(ms)) if ms.size else nan,
            "max_ms": float(np.max(ms)) if ms.size else nan,
            "failed": self.aborted,
        }

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.records:
                w.writerow([_fmt(r[k]) for k in REPORT_HEADER])

    @classmethod
    def from_csv(cls, path, controller=None):
        records = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != REPORT_HEADER:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            for row in reader:
                rec = {k: float(v) for k, v in row.items() if k not in ("step", "status")}
                rec["step"] = int(row["step"])
                rec["status"] = row["status"]
                records.append(rec)
        return cls(controller or Path(path).stem, records)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class _DdmpcDriver:
    """Feeds the data-driven controller reference windows and measurements."""

    name = "ddmpc"

    def __init__(self, controller):
        self.ctrl = controller

    def warmup(self, commands, states):
        self.ctrl.reset()
        for cmd, st in zip(commands, states):
            self.ctrl.observe(cmd.vector, st.output)

    def act(self, state, path, s_proj):
        L = self.ctrl.config_.L
        ahead = s_proj + path.spacing * np.arange(1, L + 1)
        x, y, phi, _ = path.sample(ahead)
        # keep reference headings on the same branch as the measured heading
        phi = state.phi + np.vectorize(wrap_angle)(phi - state.phi)
        sol = self.ctrl.control(np.column_stack([x, y, phi]))
        if not sol.converged:
            return None, sol.status
        cmd = SteerCommand.clamped(*sol.u_first)
        return cmd, "relaxed" if sol.relaxed else sol.status

    def observe(self, cmd, state):
        self.ctrl.observe(cmd.vector, state.output)


class _PidDriver:
    name = "pid"

    def __init__(self, pid, dt):
        self.pid = pid
        self.dt = dt

    def warmup(self, commands, states):
        self.pid.reset()

    def act(self, state, path, s_proj):
        _, phi_ref, lat, _ = path.project(state.x, state.y)
        cmd = self.pid.step(-lat, wrap_angle(phi_ref - state.phi), self.dt)
        return cmd, "ok"

    def observe(self, cmd, state):
        pass


class _KinMpcDriver:
    name = "kin_mpc"

    def __init__(self, mpc, params, dt):
        self.mpc = mpc
        self.params = params
        self.dt = dt

    def warmup(self, commands, states):
        self.mpc.reset()

    def act(self, state, path, s_proj):
        _, phi_ref, lat, _ = path.project(state.x, state.y)
        H = self.mpc.config_.horizon
        _, _, _, kappa = path.sample(s_proj + path.spacing * np.arange(H))
        cmd, diag = self.mpc.step(
            lat, wrap_angle(state.phi - phi_ref), kappa,
            self.params.speed, self.params.wheelbase, self.dt,
        )
        if diag["status"] != CONVERGED:
            return None, diag["status"]
        return cmd, diag["status"]

    def observe(self, cmd, state):
        pass


def make_driver(kind, cfg, data=None):
    if kind == "ddmpc":
        if data is None:
            data = collect_dictionary_data(cfg)
        ctrl = DDMPCController.from_config(cfg.ddmpc).fit(data)
        return _DdmpcDriver(ctrl)
    if kind == "pid":
        return _PidDriver(PIDSteering.from_config(cfg.pid), cfg.dt)
    if kind == "kin_mpc":
        return _KinMpcDriver(KinematicMPC.from_config(cfg.kin_mpc), cfg.vehicle, cfg.dt)
    raise ValueError(f"unknown controller {kind!r}; use ddmpc, pid or kin_mpc")


def run_closed_loop(driver, path, params, dt, warmup=6, timing=True, max_steps=None):
    """Step plant and controller in lockstep along ``path``.

    ``driver`` is one of the objects returned by :func:`make_driver` (any
    object with ``warmup``, ``act`` and ``observe`` works).  Before logging
    starts the vehicle drives ``warmup`` steps straight so that it reaches
    the path start exactly; those samples fill the data-driven history.
    Solve time is wall clock around ``act`` only; with ``timing=False`` it
    is logged as NaN so reports are reproducible byte for byte.
    """
    V = params.speed
    state = VehicleState(-warmup * V * dt, 0.0, 0.0)
    cmds, states = [], []
    for _ in range(warmup):
        cmd = SteerCommand(0.0, 0.0)
        state = step(state, cmd, params, dt)
        cmds.append(cmd)
        states.append(state)
    driver.warmup(cmds, states)

    n_steps = len(path) - 1 if max_steps is None else max_steps
    records = []
    last = SteerCommand(0.0, 0.0)
    report = RunReport(getattr(driver, "name", type(driver).__name__), records)
    for k in range(n_steps):
        s_proj, phi_ref, lat, (cx, cy) = path.project(state.x, state.y)
        if abs(lat) > DIVERGENCE_LIMIT:
            report.aborted = True
            report.message = f"diverged at step {k}: lateral error {lat:.2f} m"
            log.warning("%s: %s", report.controller, report.message)
            break
        t0 = time.perf_counter()
        cmd, status = driver.act(state, path, s_proj)
        elapsed = time.perf_counter() - t0
        if cmd is None:
            cmd = last  # fail-safe hold
        records.append({
            "step": k, "t": k * dt, "x_ref": cx, "y_ref": cy, "phi_ref": phi_ref,
            "x": state.x, "y": state.y, "phi": state.phi,
            "delta_l": cmd.delta_l, "delta_r": cmd.delta_r, "lat_err": lat,
            "solve_ms": elapsed * 1e3 if timing else float("nan"), "status": status,
        })
        state = step(state, cmd, params, dt)
        driver.observe(cmd, state)
        last = cmd
    return report


def compare_controllers(cfg, out_dir=None, controllers=("ddmpc", "kin_mpc", "pid"), timing=True, data=None):
    """Run every controller on the same scenario and optionally write artifacts.

    Returns ``(reports, rows)`` where rows are the summary dictionaries in
    the order given.  A run that raises or diverges shows up as a failed row.
    """
    path = cfg.path()
    if data is None and "ddmpc" in controllers:
        data = collect_dictionary_data(cfg)
    reports, rows = {}, []
    for name in controllers:
        try:
            driver = make_driver(name, cfg, data)
            report = run_closed_loop(driver, path, cfg.vehicle, cfg.dt, warmup=cfg.ddmpc.v, timing=timing)
        except Exception as exc:  # a broken run becomes a failed row
            log.exception("run %s failed", name)
            report = RunReport(name, [], aborted=True, message=str(exc))
        report.controller = name
        reports[name] = report
        rows.append(report.summary)
    ratio = _time_ratio(rows)
    for row in rows:
        row["ms_ratio_vs_kin_mpc"] = ratio.get(row["controller"], float("nan"))
    if out_dir is not None:
        write_artifacts(cfg.name, reports, rows, out_dir, path)
    return reports, rows


def _time_ratio(rows):
    by_name = {r["controller"]: r for r in rows}
    ref = by_name.get("kin_mpc", {}).get("mean_ms", float("nan"))
    return {name: r["mean_ms"] / ref if ref and np.isfinite(ref) else float("nan") for name, r in by_name.items()}


SUMMARY_FIELDS = [
    "controller", "steps", "rms_err", "max_abs_err", "max_err", "min_err",
    "mean_ms", "median_ms", "max_ms", "ms_ratio_vs_kin_mpc", "failed",
]


def format_table(rows):
    """Aligned text version of the summary rows."""
    cells = [SUMMARY_FIELDS]
    for r in rows:
        line = []
        for f in SUMMARY_FIELDS:
            v = r.get(f, "")
            if isinstance(v, bool):
                line.append("yes" if v else "no")
            elif isinstance(v, float):
                line.append(f"{v:.4g}")
            else:
                line.append(str(v))
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(SUMMARY_FIELDS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def write_summary_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[f]) if not isinstance(r[f], bool) else str(int(r[f])) for f in SUMMARY_FIELDS])


def write_artifacts(scenario, reports, rows, out_dir, path=None):
    from .svgplot import render_report_plots

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in reports.items():
        rep.to_csv(out / f"{scenario}_{name}.csv")
    write_summary_csv(rows, out / f"{scenario}_summary.csv")
    (out / f"{scenario}_summary.txt").write_text(format_table(rows), encoding="utf-8")
    render_report_plots(scenario, reports, out, path)


def tune_pid(cfg, kp_grid=(2.0, 4.0, 8.0, 16.0, 32.0, 64.0), kd_grid=(0.0, 0.1, 0.3),
             k_heading_grid=(5.0, 10.0, 20.0, 40.0), ki_grid=(0.0, 0.05), max_steer_step=math.radians(0.5)):
    """Coarse grid search of PID gains minimising RMS lateral error.

    Gains whose steer command jumps by more than ``max_steer_step`` between
    two samples are rejected as chattering.  Returns ``(best PidConfig, best
    rms)``; the defaults of :class:`PidConfig` came from this search on the
    default scenario.
    """
    path = cfg.path()
    best, best_rms = None, math.inf
    for kp in kp_grid:
        for kd in kd_grid:
            for kh in k_heading_grid:
                for ki in ki_grid:
                    pc = PidConfig(kp=kp, ki=ki, kd=kd, k_heading=kh, integral_limit=cfg.pid.integral_limit,
                                   u_min=cfg.pid.u_min, u_max=cfg.pid.u_max)
                    rep = run_closed_loop(_PidDriver(PIDSteering.from_config(pc), cfg.dt), path,
                                          cfg.vehicle, cfg.dt, timing=False)
                    if rep.aborted or not rep.records:
                        continue
                    if np.max(np.abs(np.diff(rep.column("delta_l"))), initial=0.0) > max_steer_step:
                        continue
                    rms = rep.summary["rms_err"]
                    if rms < best_rms:
                        best, best_rms = pc, rms
    return best, best_rms
