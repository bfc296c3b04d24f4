"""Minimal SVG line plots for run reports, written without a plotting library."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_plot", "render_report_plots", "PLOTS"]

PLOTS = ("trajectory", "error", "solvetime")

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 50}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def nice_ticks(lo, hi, target=6):
    """Round tick positions covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0, 1.0]
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    stop = math.ceil(hi / step) * step
    # lo / step can underflow for denormal inputs
    if start > lo:
        start -= step
    if stop < hi:
        stop += step
    n = int(round((stop - start) / step))
    return [start + i * step for i in range(n + 1)]


def _fmt_tick(v):
    return f"{v:.6g}" if v != 0 else "0"


def line_plot(series, title, xlabel, ylabel, note=None):
    """Render ``series`` as an SVG document string.

    Args:
        series: iterable of dicts with keys ``label``, ``x``, ``y`` and
            optionally ``dashed``.  NaN samples break the line.
        note: optional text shown when there is nothing to draw.
    """
    series = list(series)
    finite = [(np.asarray(s["x"], float), np.asarray(s["y"], float)) for s in series]
    xs = np.concatenate([x[np.isfinite(x) & np.isfinite(y)] for x, y in finite] or [np.zeros(0)])
    ys = np.concatenate([y[np.isfinite(x) & np.isfinite(y)] for x, y in finite] or [np.zeros(0)])
    if xs.size == 0:
        xt, yt = [0.0, 1.0], [0.0, 1.0]
    else:
        xt, yt = nice_ticks(xs.min(), xs.max()), nice_ticks(ys.min(), ys.max())
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def px(v):
        return x0 + (v - xt[0]) / (xt[-1] - xt[0]) * (x1 - x0)

    def py(v):
        return y0 + (v - yt[0]) / (yt[-1] - yt[0]) * (y1 - y0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for v in xt:
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{y0}" x2="{X:.2f}" y2="{y1}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{X:.2f}" y="{y0 + 16}" text-anchor="middle">{_fmt_tick(v)}</text>')
    for v in yt:
        Y = py(v)
        out.append(f'<line x1="{x0}" y1="{Y:.2f}" x2="{x1}" y2="{Y:.2f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{x0 - 6}" y="{Y + 4:.2f}" text-anchor="end">{_fmt_tick(v)}</text>')
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (s, (x, y)) in enumerate(zip(series, finite)):
        color = COLORS[i % len(COLORS)]
        dash = ' stroke-dasharray="6 4"' if s.get("dashed") else ""
        ok = np.isfinite(x) & np.isfinite(y)
        # split into runs of finite samples
        edges = np.flatnonzero(np.diff(np.concatenate([[0], ok.astype(int), [0]])))
        for a, b in zip(edges[::2], edges[1::2]):
            pts = " ".join(f"{px(u):.2f},{py(w):.2f}" for u, w in zip(x[a:b], y[a:b]))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = y1 + 16 + 16 * i
        out.append(f'<line x1="{x1 - 150}" y1="{ly - 4}" x2="{x1 - 126}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{x1 - 120}" y="{ly}">{escape(s["label"])}</text>')
    if xs.size == 0 and note:
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{(y0 + y1) / 2:.1f}" text-anchor="middle">'
                   f'{escape(note)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _report_plots(name, report, path=None):
    ref_x = path.x if path is not None else report.column("x_ref")
    ref_y = path.y if path is not None else report.column("y_ref")
    yield "trajectory", line_plot(
        [
            {"label": "reference", "x": ref_x, "y": ref_y, "dashed": True},
            {"label": name, "x": report.column("x"), "y": report.column("y")},
        ],
        f"{name}: path", "X [m]", "Y [m]",
    )
    yield "error", line_plot(
        [{"label": name, "x": report.column("x_ref"), "y": report.column("lat_err")}],
        f"{name}: lateral error", "station X [m]", "lateral error [m]",
    )
    yield "solvetime", line_plot(
        [{"label": name, "x": report.column("step"), "y": report.column("solve_ms")}],
        f"{name}: solve time", "step", "solve time [ms]",
        note="timing disabled",
    )


def render_report_plots(scenario, reports, out_dir, path=None):
    """Write ``<scenario>_<controller>_<plot>.svg`` for every report.

    Args:
        reports: mapping of controller name to ``RunReport``.
        path: optional reference path; the logged projections are drawn otherwise.

    Returns:
        List of written file paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rep in reports.items():
        if not rep.records:
            continue
        for plot, svg in _report_plots(name, rep, path):
            f = out / f"{scenario}_{name}_{plot}.svg"
            f.write_text(svg, encoding="utf-8")
            written.append(f)
    return written
