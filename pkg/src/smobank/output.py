"""Trace serialization (CSV), plot emission (native SVG), and metrics files.

The CSV contract is bit-exact: values are rendered with 17 significant
digits, so parsing an emitted file reproduces the in-memory series exactly.
SVG plots are plain polyline drawings in a fixed 800 x 500 viewBox with no
external plotting dependency; every polyline carries a data-series attribute
naming the CSV column it was drawn from.
"""

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

SVG_WIDTH = 800
SVG_HEIGHT = 500

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"]

#: cap on points per rendered polyline; rendering decimates, the CSV never does
MAX_PLOT_POINTS = 1500


def trace_columns(trace):
    """(header, matrix) for the CSV contract.

    Column order: t, x1..xn, xo1..xon, xs1..xsn (when comparing),
    alpha1..alphaN, nu1..nup, xi1..xiq, xihat1..xihatq, ytilde_norm.
    """
    sc = trace.scenario
    n, p, q = sc.system.n, sc.system.p, sc.system.q
    n_obs = sc.bank.n_observers
    header = ["t"]
    parts = [trace.t[:, None]]
    header += [f"x{i+1}" for i in range(n)]
    parts.append(trace.x)
    header += [f"xo{i+1}" for i in range(n)]
    parts.append(trace.xo)
    if trace.x_single is not None:
        header += [f"xs{i+1}" for i in range(n)]
        parts.append(trace.x_single)
    header += [f"alpha{i+1}" for i in range(n_obs)]
    parts.append(trace.alpha)
    header += [f"nu{i+1}" for i in range(p)]
    parts.append(trace.nu)
    header += [f"xi{i+1}" for i in range(q)]
    parts.append(trace.xi_true)
    header += [f"xihat{i+1}" for i in range(q)]
    parts.append(trace.xi_hat)
    header.append("ytilde_norm")
    parts.append(trace.ytilde_norm[:, None])
    return header, np.hstack(parts)


def write_trace_csv(trace, path):
    header, data = trace_columns(trace)
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def read_trace_csv(path):
    """(header list, data matrix) from a trace.csv file."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _ticks(lo, hi, count=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, count)


def _decimate(values):
    stride = max(1, len(values) // MAX_PLOT_POINTS)
    return values[::stride]


def render_line_svg(panels, title=""):
    """Multi-panel line chart as an SVG string.

    *panels* is a list of dicts: {"title": str, "series": [(label, t,
    values, column)]} where *column* names the CSV column the series came
    from.
    """
    n_panels = max(1, len(panels))
    margin_left, margin_right, margin_top, margin_bottom = 55, 10, 24, 28
    panel_h = (SVG_HEIGHT - margin_top) / n_panels
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{SVG_WIDTH / 2:.1f}" y="15" '
                   f'text-anchor="middle" font-size="13">{escape(title)}</text>')
    for idx, panel in enumerate(panels):
        top = margin_top + idx * panel_h
        plot_w = SVG_WIDTH - margin_left - margin_right
        plot_h = panel_h - margin_bottom
        series = [(label, _decimate(np.asarray(t, dtype=float)),
                   _decimate(np.asarray(v, dtype=float)), column)
                  for label, t, v, column in panel["series"]]
        t_lo = min(s[1].min() for s in series)
        t_hi = max(s[1].max() for s in series)
        v_lo = min(s[2].min() for s in series)
        v_hi = max(s[2].max() for s in series)
        if v_lo == v_hi:
            v_lo, v_hi = v_lo - 1.0, v_hi + 1.0
        pad = 0.05 * (v_hi - v_lo)
        v_lo, v_hi = v_lo - pad, v_hi + pad

        def sx(t):
            return margin_left + (t - t_lo) / (t_hi - t_lo) * plot_w

        def sy(v):
            return top + plot_h - (v - v_lo) / (v_hi - v_lo) * plot_h

        out.append(f'<rect x="{margin_left}" y="{top:.1f}" width="{plot_w}" '
                   f'height="{plot_h:.1f}" fill="none" stroke="#999"/>')
        for tv in _ticks(t_lo, t_hi):
            out.append(f'<line x1="{sx(tv):.1f}" y1="{top + plot_h:.1f}" '
                       f'x2="{sx(tv):.1f}" y2="{top + plot_h + 4:.1f}" '
                       f'stroke="#999"/>')
            out.append(f'<text x="{sx(tv):.1f}" y="{top + plot_h + 15:.1f}" '
                       f'text-anchor="middle">{tv:.3g}</text>')
        for vv in _ticks(v_lo, v_hi):
            out.append(f'<line x1="{margin_left - 4}" y1="{sy(vv):.1f}" '
                       f'x2="{margin_left}" y2="{sy(vv):.1f}" stroke="#999"/>')
            out.append(f'<text x="{margin_left - 6}" y="{sy(vv) + 3:.1f}" '
                       f'text-anchor="end">{vv:.3g}</text>')
        for k, (label, tt, vv, column) in enumerate(series):
            color = _PALETTE[k % len(_PALETTE)]
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(tt, vv))
            out.append(f'<polyline fill="none" stroke="{color}" '
                       f'stroke-width="1" data-series="{escape(column)}" '
                       f'points="{pts}"/>')
            out.append(f'<text x="{margin_left + plot_w - 4}" '
                       f'y="{top + 12 + 12 * k:.1f}" text-anchor="end" '
                       f'fill="{color}">{escape(label)}</text>')
        out.append(f'<text x="{margin_left + 4}" y="{top + 12:.1f}" '
                   f'fill="#333">{escape(panel["title"])}</text>')
    out.append("</svg>")
    return "\n".join(out)


def states_svg(trace):
    n = trace.scenario.system.n
    panels = []
    for i in range(n):
        series = [
            (f"x{i+1}", trace.t, trace.x[:, i], f"x{i+1}"),
            (f"xo{i+1}", trace.t, trace.xo[:, i], f"xo{i+1}"),
        ]
        if trace.x_single is not None:
            series.append((f"xs{i+1}", trace.t, trace.x_single[:, i],
                           f"xs{i+1}"))
        panels.append({"title": f"state {i+1}", "series": series})
    return render_line_svg(panels, title="plant states and estimates")


def fault_svg(trace):
    q = trace.scenario.system.q
    panels = []
    for i in range(q):
        panels.append({
            "title": f"unknown input {i+1}",
            "series": [
                (f"xi{i+1}", trace.t, trace.xi_true[:, i], f"xi{i+1}"),
                (f"xihat{i+1}", trace.t, trace.xi_hat[:, i], f"xihat{i+1}"),
            ],
        })
    return render_line_svg(panels, title="unknown input and reconstruction")


def weights_svg(trace):
    n_obs = trace.scenario.bank.n_observers
    series = [(f"alpha{i+1}", trace.t, trace.alpha[:, i], f"alpha{i+1}")
              for i in range(n_obs)]
    return render_line_svg([{"title": "combination weights", "series": series}],
                           title="estimated combination weights")


def write_outputs(trace, out_dir, metrics=None):
    """Write trace.csv, the three SVG plots, and metrics.json into out_dir."""
    out = Path(out_dir)
    write_trace_csv(trace, out / "trace.csv")
    (out / "states.svg").write_text(states_svg(trace))
    (out / "fault.svg").write_text(fault_svg(trace))
    (out / "weights.svg").write_text(weights_svg(trace))
    if metrics is not None:
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return out
