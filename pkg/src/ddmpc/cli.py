"""Command-line entry point: ``ddmpc {collect,check-pe,run,compare,plot}``.

Exit codes: 0 success, 1 a run failed (or data is not persistently
exciting), 2 configuration or input-file errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .controller import minimum_samples
from .scenario import (
    RunReport,
    collect_dictionary_data,
    compare_controllers,
    format_table,
    write_artifacts,
)
from .svgplot import render_report_plots
from .trajectory import TrajectoryFormatError, check_persistent_excitation, load_trajectory, save_trajectory

CONTROLLERS = ("ddmpc", "kin_mpc", "pid")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value config file (defaults built in)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="excitation seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ddmpc", description="Data-driven MPC lane-switch experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record open-loop excitation data to CSV")
    _common(p)

    p = sub.add_parser("check-pe", help="rank test of the inputs in a trajectory CSV")
    _common(p)
    p.add_argument("data", type=Path, help="trajectory CSV")
    p.add_argument("--order", type=int, default=None, help="excitation order (default L + 2v)")

    for name, text in (("run", "closed loop with one controller"), ("compare", "closed loop with all controllers")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "run":
            p.add_argument("--controller", choices=CONTROLLERS, default="ddmpc")
        p.add_argument("--data", type=Path, default=None, help="use this trajectory CSV instead of collecting")
        p.add_argument("--timing", choices=("on", "off"), default="on",
                       help="'off' logs solve_ms as NaN so outputs are byte-reproducible")

    p = sub.add_parser("plot", help="re-render SVG plots from RunReport CSVs")
    _common(p)
    p.add_argument("reports", type=Path, nargs="+", help="RunReport CSV files")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_collect(args, cfg):
    data = collect_dictionary_data(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{cfg.name}_data.csv"
    save_trajectory(data, path)
    print(f"wrote {path} ({data.n_samples} samples, m={data.n_inputs}, p={data.n_outputs})")
    return 0


def cmd_check_pe(args, cfg):
    data = load_trajectory(args.data)
    order = args.order if args.order is not None else cfg.ddmpc.L + 2 * cfg.ddmpc.v
    res = check_persistent_excitation(data.inputs, order, tol=cfg.ddmpc.pe_tol)
    print(res.message)
    print(f"samples {data.n_samples}, minimum for order {order}: {minimum_samples(data.n_inputs, order)}")
    return 0 if res else 1


def _data_for(args):
    return load_trajectory(args.data) if args.data is not None else None


def _finish(cfg, reports, rows, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.name}_config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    print(format_table(rows), end="")
    failed = [r["controller"] for r in rows if r["failed"]]
    for name in failed:
        print(f"run failed: {name}: {reports[name].message}", file=sys.stderr)
    return 1 if failed else 0


def cmd_run(args, cfg):
    reports, rows = compare_controllers(
        cfg, None, controllers=(args.controller,), timing=args.timing == "on", data=_data_for(args)
    )
    write_artifacts(cfg.name, reports, rows, args.out, cfg.path())
    return _finish(cfg, reports, rows, args.out)


def cmd_compare(args, cfg):
    reports, rows = compare_controllers(
        cfg, args.out, controllers=CONTROLLERS, timing=args.timing == "on", data=_data_for(args)
    )
    return _finish(cfg, reports, rows, args.out)


def cmd_plot(args, cfg):
    reports = {}
    prefix = f"{cfg.name}_"
    for f in args.reports:
        try:
            rep = RunReport.from_csv(f)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read report: {exc}", path=f) from None
        name = f.stem[len(prefix):] if f.stem.startswith(prefix) else f.stem
        reports[name] = rep
    written = render_report_plots(cfg.name, reports, args.out, cfg.path())
    for w in written:
        print(f"wrote {w}")
    return 0


COMMANDS = {
    "collect": cmd_collect,
    "check-pe": cmd_check_pe,
    "run": cmd_run,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, TrajectoryFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
