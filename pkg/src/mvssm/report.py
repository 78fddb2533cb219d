"""CSV tables and static SVG line charts.

Floats are written with 17 significant digits so that two runs can be
compared by plain file diff.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["fmt", "write_csv", "read_csv", "svg_line_chart", "plot_csv", "PlotError"]


class PlotError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotError(f"{path}: no header row")
        rows = list(reader)
    return list(reader.fieldnames), rows


def _num(s: str) -> float:
    try:
        return float(s)
    except (TypeError, ValueError):
        return math.nan


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def svg_line_chart(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    logx: bool = False,
    logy: bool = False,
    width: int = 640,
    height: int = 420,
) -> str:
    """One ``<polyline>`` per series; points that cannot be drawn on the axes are dropped."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def tx(v, log):
        return math.log10(v) if log else v

    clean = {}
    for name, (xs, ys) in series.items():
        pts = [
            (tx(x, logx), tx(y, logy))
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)
        ]
        clean[name] = pts
    allpts = [p for pts in clean.values() for p in pts]
    if not allpts:
        raise PlotError("nothing to plot")
    x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
    y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    def tick(v, log):
        return f"1e{v:.3g}" if log else f"{v:.4g}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        out.append(
            f'<text x="{px(fx):.1f}" y="{top + ph + 16}" text-anchor="middle">{tick(fx, logx)}</text>'
        )
        out.append(f'<text x="{left - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{tick(fy, logy)}</text>')
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for i, (name, pts) in enumerate(clean.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(
            f'<polyline data-series="{_esc(name)}" fill="none" stroke="{colour}" '
            f'stroke-width="1.5" points="{coords}"/>'
        )
        ly = top + 14 + 18 * i
        out.append(
            f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
            f'stroke="{colour}" stroke-width="2"/>'
        )
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _detect(header):
    if "eps2" in header:
        return "convergence"
    if "D_n" in header:
        return "stability"
    if "max_abs" in header:
        return "run"
    if "per_step_ms" in header:
        return "bench"
    raise PlotError("unrecognised CSV header")


def plot_csv(path, kind: str | None = None) -> str:
    """Render a CSV written by this package as an SVG document."""
    try:
        return _plot(path, kind)
    except (KeyError, csv.Error, UnicodeDecodeError) as exc:
        raise PlotError(f"{path}: malformed CSV ({exc})") from None


def _plot(path, kind):
    header, rows = read_csv(path)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    kind = kind or _detect(header)
    if kind == "convergence":
        series = {}
        for r in rows:
            if not r.get("h"):
                continue
            xs, ys = series.setdefault(f"{r['scheme']} eps2", ([], []))
            xs.append(_num(r["h"]))
            ys.append(_num(r["eps2"]))
        return svg_line_chart(series, "Strong error", "h", "eps2", logx=True, logy=True)
    if kind == "stability":
        t = [_num(r["t"]) for r in rows]
        series = {"D_n": (t, [_num(r["D_n"]) for r in rows]), "envelope": (t, [_num(r["envelope"]) for r in rows])}
        positive = all(v > 0 for v in series["D_n"][1] if math.isfinite(v))
        return svg_line_chart(series, "Mean-square gap", "t", "D_n", logy=positive)
    if kind == "run":
        series = {}
        for r in rows:
            xs, ys = series.setdefault(r["scheme"], ([], []))
            xs.append(_num(r["t"]))
            ys.append(_num(r["mean_0"]))
        return svg_line_chart(series, "Empirical mean", "t", "mean_0")
    if kind == "bench":
        series = {}
        for r in rows:
            xs, ys = series.setdefault(f"{r['scheme']} threads={r['threads']}", ([], []))
            xs.append(_num(r["N"]))
            ys.append(_num(r["per_step_ms"]))
        return svg_line_chart(series, "Cost per step", "N", "ms", logx=True, logy=True)
    raise PlotError(f"unknown plot kind {kind!r}")
