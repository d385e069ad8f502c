"""Self-contained SVG log-log plots with byte-stable output."""
from __future__ import annotations

import math
from typing import Optional, Sequence

WIDTH, HEIGHT = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _decades(lo: float, hi: float) -> list[int]:
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(x: Sequence[float], y: Sequence[float], title: str, xlabel: str, ylabel: str,
               fit: Optional[tuple[float, float]] = None,
               reference_slope: Optional[float] = None) -> str:
    """Scatter of ``(x, y)`` on log axes.

    ``fit`` is ``(slope, intercept)`` in natural-log space and is drawn only
    with two or more points.  The reference line has ``reference_slope`` and
    passes through the first point.
    """
    if not x or len(x) != len(y):
        raise ValueError("need a nonempty table of matching x and y values")
    if any(v <= 0 for v in list(x) + list(y)):
        raise ValueError("log axes need positive values")
    lx = [math.log10(v) for v in x]
    ly = [math.log10(v) for v in y]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(ly), max(ly)
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.08 * (x1 - x0), 0.15 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for d in _decades(x0, x1):
        if x0 <= d <= x1:
            out.append(f'<line x1="{_fmt(px(d))}" y1="{TOP + ph}" x2="{_fmt(px(d))}" y2="{TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_fmt(px(d))}" y="{TOP + ph + 18}" text-anchor="middle" font-size="11">1e{d}</text>')
    for d in _decades(y0, y1):
        if y0 <= d <= y1:
            out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(py(d))}" x2="{LEFT}" y2="{_fmt(py(d))}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{_fmt(py(d) + 4)}" text-anchor="end" font-size="11">1e{d}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.2f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">{ylabel}</text>')
    xa, xb = min(lx), max(lx)
    if fit is not None and len(x) >= 2:
        slope, icpt = fit
        ya = (slope * xa * math.log(10) + icpt) / math.log(10)
        yb = (slope * xb * math.log(10) + icpt) / math.log(10)
        out.append(f'<line x1="{_fmt(px(xa))}" y1="{_fmt(py(ya))}" x2="{_fmt(px(xb))}" y2="{_fmt(py(yb))}" '
                   f'stroke="steelblue" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + 8}" y="{TOP + 16}" font-size="11" fill="steelblue">fitted slope {slope:.3f}</text>')
    if reference_slope is not None and len(x) >= 2:
        yb = ly[0] + reference_slope * (xb - lx[0])
        out.append(f'<line x1="{_fmt(px(lx[0]))}" y1="{_fmt(py(ly[0]))}" x2="{_fmt(px(xb))}" y2="{_fmt(py(yb))}" '
                   f'stroke="firebrick" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{LEFT + 8}" y="{TOP + 30}" font-size="11" fill="firebrick">reference slope {reference_slope:.3f}</text>')
    for a, b in zip(lx, ly):
        out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="4" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_table(rows: Sequence[dict], x_key: str, y_key: str, title: str,
               reference_slope: Optional[float] = None) -> str:
    from .analysis import fit_decay_rate
    x = [float(r[x_key]) for r in rows]
    y = [float(r[y_key]) for r in rows]
    fit = None
    if len(x) >= 2:
        f = fit_decay_rate(x, y)
        fit = (f.slope, f.intercept)
    return loglog_svg(x, y, title, x_key, y_key, fit, reference_slope)
