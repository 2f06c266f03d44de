"""Static SVG line plots of fitted saturation curves.

Output is deterministic: no timestamps or random ids, fixed number formatting.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=64, right=150, top=24, bottom=52)
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def curves_svg(series, x_label="poisoned samples", y_label="attack accuracy", samples=100):
    """Render ``series`` as an SVG document string.

    ``series`` is a list of ``(label, fitted_curve, style)`` where ``style``
    is ``"solid"`` or ``"dashed"``. Each entry becomes one ``<path>``.
    """
    if not series:
        raise ValueError("nothing to plot")
    x_lo = min(f.x_min for _, f, _ in series)
    x_hi = max(f.x_max for _, f, _ in series)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return MARGIN["top"] + (1.0 - y) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    x0, y0, x1, y1 = MARGIN["left"], MARGIN["top"] + ph, MARGIN["left"] + pw, MARGIN["top"]
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<text x="{_fmt(px(t))}" y="{y0 + 16}" text-anchor="middle">{t:.0f}</text>')
    for t in _ticks(0.0, 1.0):
        out.append(f'<text x="{x0 - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.2f}</text>')
    out.append(
        f'<text x="{_fmt(x0 + pw / 2)}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="16" y="{_fmt(y1 + ph / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_fmt(y1 + ph / 2)})">{escape(y_label)}</text>'
    )
    for i, (label, fit, style) in enumerate(series):
        colour = "black" if style == "dashed" else PALETTE[i % len(PALETTE)]
        xs = np.linspace(fit.x_min, fit.x_max, samples)
        ys = np.clip(fit(xs), 0.0, 1.0)
        d = " ".join(f"{'M' if j == 0 else 'L'}{_fmt(px(a))},{_fmt(py(b))}" for j, (a, b) in enumerate(zip(xs, ys)))
        dash = ' stroke-dasharray="6 4"' if style == "dashed" else ""
        out.append(f'<path d="{d}" fill="none" stroke="{colour}" stroke-width="2"{dash}/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = x1 + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 28}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_curves_svg(path, series, **kwargs):
    Path(path).write_text(curves_svg(series, **kwargs), encoding="utf-8")
