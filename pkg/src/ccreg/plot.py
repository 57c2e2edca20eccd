"""Static SVG chart: mean MSE against n per estimator, one panel per delta.

Panels are laid out with one row per regime and one column per delta.  The
y axis is log scale; shaded bands are the 2.5%/97.5% quantiles.  Output is
a pure function of the summary rows, so identical input gives identical
bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .harness import SummaryRecord

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"]
PANEL_W, PANEL_H = 320, 240
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 36, 44
LEGEND_H = 28


def _num(x: float) -> str:
    return f"{x:.2f}"


def _log_range(values: list[float]) -> tuple[float, float]:
    pos = [v for v in values if v > 0 and math.isfinite(v)]
    if not pos:
        return -1.0, 1.0
    lo, hi = math.log10(min(pos)), math.log10(max(pos))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return math.floor(lo - pad), math.ceil(hi + pad)


def _lin_range(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render_svg(rows: list[SummaryRecord]) -> str:
    if not rows:
        raise ValueError("no summary rows to plot")
    regimes = sorted({r.regime for r in rows})
    deltas = sorted({r.delta for r in rows})
    estimators = []
    for r in rows:
        if r.estimator not in estimators:
            estimators.append(r.estimator)
    color = {e: PALETTE[i % len(PALETTE)] for i, e in enumerate(estimators)}

    width = len(deltas) * PANEL_W
    height = len(regimes) * PANEL_H + LEGEND_H
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]

    for ri, regime in enumerate(regimes):
        for di, delta in enumerate(deltas):
            cell = [r for r in rows if r.regime == regime and r.delta == delta]
            out.extend(_panel(cell, regime, delta, di * PANEL_W, ri * PANEL_H, estimators, color))

    y = len(regimes) * PANEL_H + 18
    x = MARGIN_L
    for e in estimators:
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{color[e]}" stroke-width="2"/>')
        out.append(f'<text x="{x + 22}" y="{y}">{escape(e)}</text>')
        x += 30 + 7 * len(e)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _panel(cell, regime, delta, ox, oy, estimators, color) -> list[str]:
    x0, x1 = ox + MARGIN_L, ox + PANEL_W - MARGIN_R
    y0, y1 = oy + MARGIN_T, oy + PANEL_H - MARGIN_B
    ns = [math.log10(r.n) for r in cell]
    xlo, xhi = _lin_range(ns)
    ylo, yhi = _log_range([v for r in cell for v in (r.mean_mse, r.q025, r.q975)])

    def sx(n: int) -> float:
        return x0 + (math.log10(n) - xlo) / (xhi - xlo) * (x1 - x0)

    def sy(v: float) -> float:
        v = max(v, 10.0**ylo)
        return y1 - (math.log10(v) - ylo) / (yhi - ylo) * (y1 - y0)

    parts = [
        f'<g id="panel-{escape(regime)}-{delta!r}">',
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" fill="none" stroke="#444"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{oy + 20}" text-anchor="middle">'
        f'{escape(regime)}, delta = {delta:g}</text>',
    ]
    for e in range(int(ylo), int(yhi) + 1):
        y = sy(10.0**e)
        parts.append(f'<line x1="{x0 - 4}" y1="{_num(y)}" x2="{x0}" y2="{_num(y)}" stroke="#444"/>')
        parts.append(f'<text x="{x0 - 6}" y="{_num(y + 4)}" text-anchor="end">1e{e}</text>')
    for n in sorted({r.n for r in cell}):
        x = sx(n)
        parts.append(f'<line x1="{_num(x)}" y1="{y1}" x2="{_num(x)}" y2="{y1 + 4}" stroke="#444"/>')
        parts.append(f'<text x="{_num(x)}" y="{y1 + 16}" text-anchor="middle">{n}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y1 + 32}" text-anchor="middle">n</text>')

    for est in estimators:
        series = sorted((r for r in cell if r.estimator == est), key=lambda r: r.n)
        if not series:
            continue
        c = color[est]
        upper = [f"{_num(sx(r.n))},{_num(sy(r.q975))}" for r in series]
        lower = [f"{_num(sx(r.n))},{_num(sy(r.q025))}" for r in reversed(series)]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{c}" fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{_num(sx(r.n))},{_num(sy(r.mean_mse))}" for r in series)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        for r in series:
            parts.append(f'<circle cx="{_num(sx(r.n))}" cy="{_num(sy(r.mean_mse))}" r="2.5" fill="{c}"/>')
    parts.append("</g>")
    return parts
