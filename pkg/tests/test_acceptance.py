"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the verdict lines are printed
even when output capture is on).
"""

import math
import time

import numpy as np
import pytest

from ddmpc.cli import main
from ddmpc.controller import (
    DDMPCController,
    DdmpcConfig,
    InsufficientDataError,
    build_dictionary,
    minimum_samples,
)
from ddmpc.qp import CONVERGED, ActiveSetQP, QpProblem, kkt_residuals
from ddmpc.scenario import ScenarioConfig, collect_dictionary_data, make_driver, run_closed_loop
from ddmpc.trajectory import TrajectoryData, build_hankel, check_persistent_excitation
from ddmpc.vehicle import SteerCommand, VehicleParams, VehicleState, step
from oracles import circle_pose, model_mpc_first_input, primal_active_set, random_observable_system, random_qp
from oracles import simulate_lti


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, detail

    return report


def test_criterion_1_hankel_span_exactness(verdict):
    start = time.perf_counter()
    worst, count = 0.0, 0
    rng = np.random.default_rng(2024)
    depth = 30
    while count < 120:
        n, m, p = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        sys = random_observable_system(rng, n, m, p)
        order = depth + n
        N = minimum_samples(m, order) + 20
        u = rng.normal(size=(N, m))
        if not check_persistent_excitation(u, order):
            continue
        y, _ = simulate_lti(sys, u, rng.normal(size=n))
        H = np.vstack([build_hankel(u, depth).data, build_hankel(y, depth).data])
        for _ in range(3):
            uf = rng.normal(size=(depth, m))
            yf, _ = simulate_lti(sys, uf, rng.normal(size=n))
            w = np.concatenate([uf.reshape(-1), yf.reshape(-1)])
            alpha = np.linalg.lstsq(H, w, rcond=None)[0]
            worst = max(worst, np.linalg.norm(H @ alpha - w))
        count += 1
    elapsed = time.perf_counter() - start
    verdict(1, "Hankel span reproduces fresh windows", worst < 1e-8,
            f"{count} systems, worst residual {worst:.2e}, {elapsed:.1f} s")


def test_criterion_2_pe_correctness(verdict):
    rng = np.random.default_rng(7)
    failures = []
    order = 12
    for m in (1, 2):
        const = np.ones((200, m))
        if check_persistent_excitation(const, order):
            failures.append(f"constant m={m} passed")
        for period in (2, 3, 5):
            base = rng.normal(size=(period, m))
            periodic = np.tile(base, (200 // period + 1, 1))[:200]
            if check_persistent_excitation(periodic, order):
                failures.append(f"period {period} m={m} passed")
        for trial in range(10):
            iid = rng.normal(size=(200, m))
            if not check_persistent_excitation(iid, order):
                failures.append(f"iid m={m} trial {trial} failed")
    # the minimum-length bound: error exactly when N < (m + 1) * order - 1
    boundary_checks = 0
    for m in (1, 2, 3):
        for L, v in ((2, 1), (4, 2), (6, 3)):
            cfg = DdmpcConfig(L=L, v=v)
            pe_order = L + 2 * v
            bound = (m + 1) * pe_order - 1
            for N in range(pe_order, bound + 3):
                data = TrajectoryData(rng.normal(size=(N, m)), rng.normal(size=(N, 1)), 1.0)
                try:
                    build_dictionary(data, cfg)
                    raised = False
                except InsufficientDataError:
                    raised = True
                if raised != (N < bound):
                    failures.append(f"m={m} order={pe_order} N={N}: raised={raised}")
                res = check_persistent_excitation(data.inputs, pe_order)
                if ("insufficient columns" in res.message) != (N < bound):
                    failures.append(f"rank test m={m} order={pe_order} N={N}")
                boundary_checks += 1
    verdict(2, "persistent excitation test", not failures,
            f"{boundary_checks} boundary cases; " + ("; ".join(failures[:3]) or "no mismatches"))


def test_criterion_3_qp_soundness(verdict):
    start = time.perf_counter()
    worst_kkt, worst_obj, n_max = 0.0, 0.0, 0
    statuses = set()
    for seed in range(110):
        rng = np.random.default_rng(10_000 + seed)
        n = int(rng.integers(2, 201)) if seed % 5 else int(rng.integers(150, 201))
        n_eq = int(rng.integers(0, n // 4 + 1))
        n_box = int(rng.integers(1, n + 1))
        H, g, A, b, C, lb, ub = random_qp(rng, n, n_eq, n_box)
        prob = QpProblem(H, g, 0.0, A, b, C, lb, ub)
        res = ActiveSetQP(H, A, C, max_iter=2000).solve(g, b, lb, ub)
        statuses.add(res.status)
        kkt = kkt_residuals(prob, res.x, res.eq_multipliers, res.box_multipliers)
        worst_kkt = max(worst_kkt, max(v for k, v in kkt.items() if k != "stationarity_rel"))
        f_ref = prob.objective(primal_active_set(H, g, A, b, C, lb, ub))
        worst_obj = max(worst_obj, abs(prob.objective(res.x) - f_ref) / max(1.0, abs(f_ref)))
        n_max = max(n_max, n)
    elapsed = time.perf_counter() - start
    ok = statuses == {CONVERGED} and worst_kkt < 1e-8 and worst_obj < 1e-6 and elapsed < 60
    verdict(3, "active-set QP solver", ok,
            f"110 QPs up to n={n_max}, worst KKT {worst_kkt:.1e}, worst rel. objective gap {worst_obj:.1e}, "
            f"{elapsed:.1f} s including the oracle")


def test_criterion_4_model_mpc_equivalence(verdict):
    worst = 0.0
    saturated = 0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        n, m, p = 3, 2, 2
        sys = random_observable_system(rng, n, m, p)
        A, B, C, D = sys
        u = rng.normal(size=(200, m))
        y, _ = simulate_lti(sys, u, rng.normal(size=n))
        L, v = 10, n
        R = 0.1
        cfg = DdmpcConfig(L=L, v=v, Q=1.0, R=R, lam=1e-6, u_min=-1.0, u_max=1.0)
        ctrl = DDMPCController.from_config(cfg).fit(TrajectoryData(u, y, 1.0))
        x = rng.normal(size=n)
        ctrl.reset()
        for _ in range(v):
            uk = rng.normal(size=m) * 0.1
            ctrl.observe(uk, C @ x + D @ uk)
            x = A @ x + B @ uk
        xd, xm = x.copy(), x.copy()
        for k in range(100):
            t = k + np.arange(L)
            ref = 2.0 * np.column_stack([np.sin(0.1 * t), np.cos(0.07 * t)])
            ud = ctrl.control(ref).u_first
            yd = C @ xd + D @ ud
            ctrl.observe(ud, yd)
            xd = A @ xd + B @ ud
            um = model_mpc_first_input(sys, xm, ref, np.eye(p), R * np.eye(m), -np.ones(m), np.ones(m))
            ym = C @ xm + D @ um
            xm = A @ xm + B @ um
            worst = max(worst, float(np.abs(yd - ym).max()))
            saturated += bool(np.any(np.abs(ud) >= 1.0 - 1e-9))
    verdict(4, "DDMPC equals model-based MPC on LTI plants", worst < 1e-3,
            f"3 systems x 100 steps, worst output gap {worst:.1e}, {saturated} steps with active bounds")


@pytest.fixture(scope="module")
def lane_switch_runs():
    cfg = ScenarioConfig()
    path = cfg.path()
    start = time.perf_counter()
    data = collect_dictionary_data(cfg)
    ddmpc = run_closed_loop(make_driver("ddmpc", cfg, data), path, cfg.vehicle, cfg.dt, warmup=cfg.ddmpc.v)
    elapsed = time.perf_counter() - start
    kin = run_closed_loop(make_driver("kin_mpc", cfg), path, cfg.vehicle, cfg.dt, warmup=cfg.ddmpc.v)
    pid = run_closed_loop(make_driver("pid", cfg), path, cfg.vehicle, cfg.dt, warmup=cfg.ddmpc.v)
    return cfg, data, {"ddmpc": ddmpc, "kin_mpc": kin, "pid": pid}, elapsed


def test_criterion_5_tracking_quality(verdict, lane_switch_runs):
    cfg, data, runs, elapsed = lane_switch_runs
    d = cfg.ddmpc
    assert (d.L, d.v, d.lam) == (24, 6, 1e-3) and d.Q == 1.0 and d.R == 1e-2
    s = runs["ddmpc"].summary
    ok = not s["failed"] and s["max_abs_err"] < 0.3 and s["rms_err"] < 0.15 and elapsed < 10
    verdict(5, "DDMPC dual lane switch tracking", ok,
            f"max |e| {s['max_abs_err']:.4f} m, RMS {s['rms_err']:.2e} m, "
            f"error range [{s['min_err']:.4f}, {s['max_err']:.4f}] m, {elapsed:.2f} s end to end")


def test_criterion_6_comparative_ordering(verdict, lane_switch_runs):
    _, _, runs, _ = lane_switch_runs
    rms = {k: r.summary["rms_err"] for k, r in runs.items()}
    failed = [k for k, r in runs.items() if r.summary["failed"]]
    ok = not failed and rms["ddmpc"] <= rms["kin_mpc"] and rms["ddmpc"] <= rms["pid"]
    verdict(6, "DDMPC has the lowest RMS error", ok,
            ", ".join(f"{k} RMS {v:.2e} m" for k, v in rms.items()) + (f", failed: {failed}" if failed else ""))


def test_criterion_7_timing(verdict, lane_switch_runs):
    _, data, runs, _ = lane_switch_runs
    mean_dd = runs["ddmpc"].summary["mean_ms"]
    mean_kin = runs["kin_mpc"].summary["mean_ms"]
    ok = data.n_samples == 646 and mean_dd < 50.0
    verdict(7, "DDMPC solve time", ok,
            f"N={data.n_samples}, DDMPC mean {mean_dd:.2f} ms, kin-MPC mean {mean_kin:.2f} ms, "
            f"ratio {mean_dd / mean_kin:.2f} (reported only)")


def test_criterion_8_circular_arcs(verdict):
    params = VehicleParams()
    dt = 0.05
    worst = 0.0
    for delta in (0.005, 0.02, 0.05, 0.1, 0.2, -0.3, 0.5):
        state = VehicleState()
        radius = params.wheelbase / math.tan(delta)
        for k in range(1, int(round(10.0 / dt)) + 1):
            state = step(state, SteerCommand(delta, delta), params, dt)
            x, y, _ = circle_pose(k * dt, params.speed, params.wheelbase, delta)
            worst = max(worst, math.hypot(state.x - x, state.y - y) / abs(radius),
                        abs(math.hypot(state.x, state.y - radius) - abs(radius)) / abs(radius))
    verdict(8, "RK4 constant-steer arcs", worst < 1e-6, f"7 steer angles over 10 s, worst relative error {worst:.1e}")


def test_criterion_9_determinism(verdict, tmp_path):
    outs = [tmp_path / "first", tmp_path / "second"]
    codes = [main(["compare", "--seed", "11", "--timing", "off", "--out", str(o)]) for o in outs]
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = codes == [0, 0] and len(names) == 4 and same == names
    verdict(9, "seeded compare runs are byte-identical", ok, f"{len(same)}/{len(names)} CSV files identical")
