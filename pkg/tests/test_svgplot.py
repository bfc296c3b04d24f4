import math
import xml.etree.ElementTree as ET

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ddmpc.scenario import RunReport
from ddmpc.svgplot import PLOTS, line_plot, nice_ticks, render_report_plots

SVG = "{http://www.w3.org/2000/svg}"


@given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e6))
def test_ticks_cover_range(lo, span):
    hi = lo + span
    ticks = nice_ticks(lo, hi)
    assert ticks[0] <= lo and ticks[-1] >= hi
    assert 2 <= len(ticks) <= 20
    steps = np.diff(ticks)
    np.testing.assert_allclose(steps, steps[0], atol=1e-12 * max(abs(lo), abs(hi), 1.0))


def test_ticks_degenerate_range():
    assert len(nice_ticks(3.0, 3.0)) >= 2
    assert nice_ticks(math.nan, 1.0) == [0.0, 1.0]


def test_line_plot_is_valid_svg():
    doc = line_plot(
        [{"label": "a & b", "x": [0, 1, 2], "y": [0, 1, 4]},
         {"label": "ref", "x": [0, 1, 2], "y": [0, 2, 3], "dashed": True}],
        "title", "x", "y",
    )
    root = ET.fromstring(doc)
    assert root.tag == SVG + "svg"
    lines = root.findall(f".//{SVG}polyline")
    assert len(lines) >= 2
    assert "a &amp; b" in doc


def test_nan_breaks_the_line():
    doc = line_plot([{"label": "s", "x": [0, 1, 2, 3, 4], "y": [0, 1, math.nan, 3, 4]}], "t", "x", "y")
    assert len(ET.fromstring(doc).findall(f".//{SVG}polyline")) == 2


def test_empty_plot_shows_note():
    doc = line_plot([{"label": "s", "x": [math.nan], "y": [math.nan]}], "t", "x", "y", note="timing disabled")
    ET.fromstring(doc)
    assert "timing disabled" in doc


def _report(name, n=20, timing=True):
    recs = []
    for k in range(n):
        recs.append({"step": k, "t": 0.05 * k, "x_ref": 0.5 * k, "y_ref": 0.0, "phi_ref": 0.0,
                     "x": 0.5 * k, "y": 0.01 * k, "phi": 0.0, "delta_l": 0.0, "delta_r": 0.0,
                     "lat_err": -0.01 * k, "solve_ms": 1.0 if timing else math.nan, "status": "ok"})
    return RunReport(name, recs)


def test_render_names_and_count(tmp_path):
    reports = {"ddmpc": _report("ddmpc"), "pid": _report("pid", timing=False)}
    written = render_report_plots("lane", reports, tmp_path)
    names = sorted(p.name for p in written)
    expected = sorted(f"lane_{c}_{p}.svg" for c in reports for p in PLOTS)
    assert names == expected
    for p in written:
        ET.parse(p)
    assert "timing disabled" in (tmp_path / "lane_pid_solvetime.svg").read_text()


def test_render_is_deterministic(tmp_path):
    a = render_report_plots("s", {"c": _report("c")}, tmp_path / "a")
    b = render_report_plots("s", {"c": _report("c")}, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_render_skips_empty_report(tmp_path):
    written = render_report_plots("s", {"c": RunReport("c", []), "d": _report("d")}, tmp_path)
    assert sorted(p.name for p in written) == sorted(f"s_d_{p}.svg" for p in PLOTS)
