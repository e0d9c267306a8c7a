"""Minimal SVG line plots (no plotting dependency)."""
from __future__ import annotations

from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_plot_svg(series: dict[str, list[float]], title: str = "", xlabel: str = "",
                  ylabel: str = "", width: int = 640, height: int = 400) -> str:
    """Render named y-series (x = 1..n) as polylines with a legend."""
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    ys = [y for vals in series.values() for y in vals]
    n = max((len(v) for v in series.values()), default=1)
    lo, hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(i: int) -> float:
        return left + (pw * (i - 1) / (n - 1) if n > 1 else pw / 2)

    def sy(y: float) -> float:
        return top + ph * (hi - y) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for t in range(5):
        y = lo + (hi - lo) * t / 4
        out.append(f'<text x="{left - 6}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.4g}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{sy(y):.1f}" y2="{sy(y):.1f}" stroke="#ddd"/>')
    for i in range(1, n + 1):
        if n <= 12 or i % max(1, n // 10) == 0 or i == 1:
            out.append(f'<text x="{sx(i):.1f}" y="{top + ph + 16}" text-anchor="middle">{i}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for j, (name, vals) in enumerate(series.items()):
        color = COLORS[j % len(COLORS)]
        pts = " ".join(f"{sx(i):.2f},{sy(y):.2f}" for i, y in enumerate(vals, 1))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 16 + 18 * j
        out.append(f'<line x1="{left + pw - 170}" x2="{left + pw - 145}" y1="{ly}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 140}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
