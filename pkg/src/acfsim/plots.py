"""Hand-rolled SVG line charts.

Deliberately not matplotlib: the report contract requires byte-identical
output for identical inputs, and these charts only need category x positions,
one polyline per series, ticks, and labels. All coordinates are formatted
with fixed precision so the emitted text is a pure function of the data.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH = 640.0
HEIGHT = 440.0
MARGIN_L = 72.0
MARGIN_R = 24.0
MARGIN_T = 42.0
MARGIN_B = 56.0


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / (n - 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw - 1e-12 * mag:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks or [lo]


def line_chart_svg(x_labels: list[str], series: list[tuple[str, list]],
                   title: str, xlabel: str, ylabel: str) -> str:
    """Category line chart: one dotted polyline per series.

    ``series`` maps a name to one y value (or None) per x category; None
    breaks the line. The y range pads the data by 2% on each side so no
    polyline touches the frame.
    """
    if not x_labels:
        raise ValueError("need at least one x category")
    ys = [y for _, vals in series for y in vals if y is not None]
    if not ys:
        raise ValueError("no data to plot")
    y_lo, y_hi = min(ys), max(ys)
    span = y_hi - y_lo
    pad = 0.02 * span if span > 0 else max(abs(y_hi), 1.0) * 0.02
    y_lo -= pad
    y_hi += pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    nx = len(x_labels)

    def x_pos(i: int) -> float:
        if nx == 1:
            return MARGIN_L + plot_w / 2.0
        return MARGIN_L + plot_w * i / (nx - 1)

    def y_pos(v: float) -> float:
        return MARGIN_T + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" '
        f'height="{HEIGHT:.0f}" viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">'
    )
    out.append(f'<rect width="{WIDTH:.0f}" height="{HEIGHT:.0f}" fill="white"/>')
    out.append(
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{escape(title)}</text>'
    )
    # frame
    out.append(
        f'<rect x="{_fmt(MARGIN_L)}" y="{_fmt(MARGIN_T)}" width="{_fmt(plot_w)}" '
        f'height="{_fmt(plot_h)}" fill="none" stroke="black" stroke-width="1"/>'
    )
    # y ticks
    for t in _ticks(y_lo, y_hi):
        yp = y_pos(t)
        out.append(
            f'<line x1="{_fmt(MARGIN_L - 4)}" y1="{_fmt(yp)}" x2="{_fmt(MARGIN_L)}" '
            f'y2="{_fmt(yp)}" stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_fmt(MARGIN_L - 8)}" y="{_fmt(yp + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{t:g}</text>'
        )
    # x ticks: one per category
    for i, lab in enumerate(x_labels):
        xp = x_pos(i)
        out.append(
            f'<line x1="{_fmt(xp)}" y1="{_fmt(MARGIN_T + plot_h)}" x2="{_fmt(xp)}" '
            f'y2="{_fmt(MARGIN_T + plot_h + 4)}" stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_fmt(xp)}" y="{_fmt(MARGIN_T + plot_h + 18)}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{escape(lab)}</text>"
        )
    out.append(
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 14:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {MARGIN_T + plot_h / 2:.1f})">'
        f"{escape(ylabel)}</text>"
    )
    for name, vals in series:
        runs: list[list[str]] = [[]]
        for i, v in enumerate(vals):
            if v is None:
                if runs[-1]:
                    runs.append([])
                continue
            runs[-1].append(f"{_fmt(x_pos(i))},{_fmt(y_pos(v))}")
        for run in runs:
            if len(run) >= 2:
                out.append(
                    f'<polyline points="{" ".join(run)}" fill="none" '
                    f'stroke="#33557f" stroke-width="1.2" stroke-dasharray="3 3">'
                    f"<title>{escape(name)}</title></polyline>"
                )
            elif len(run) == 1:
                x, y = run[0].split(",")
                out.append(
                    f'<circle cx="{x}" cy="{y}" r="2" fill="#33557f">'
                    f"<title>{escape(name)}</title></circle>"
                )
    out.append("</svg>")
    return "\n".join(out) + "\n"
