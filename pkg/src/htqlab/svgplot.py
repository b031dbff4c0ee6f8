"""Hand-rolled polyline SVG plots: no plotting stack, just axes, series,
and a legend. Good enough for sweep curves and trace overlays."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    t0 = math.ceil(lo / step) * step
    out = []
    t = t0
    while t <= hi + 1e-12 * max(1, abs(hi)):
        out.append(round(t, 12))
        t += step
    return out


def line_plot(series: list[dict], path, title: str = "", xlabel: str = "",
              ylabel: str = "", logy: bool = False):
    """series: [{'x': [...], 'y': [...], 'label': str}, ...] -> one SVG."""
    pts = [(x, y) for s in series for x, y in zip(s["x"], s["y"])
           if y is not None and not (isinstance(y, float) and math.isnan(y))]
    if not pts:
        raise ValueError("no rows to plot")

    def ty(v):
        return math.log10(max(v, 1e-300)) if logy else v

    xs = [p[0] for p in pts]
    ys = [ty(p[1]) for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return _MT + ph - (ty(y) - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{_W / 2}" y="20" text-anchor="middle" '
                     f'font-size="14">{escape(title)}</text>')
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(tx):.1f}" y1="{_MT + ph}" x2="{px(tx):.1f}" '
                     f'y2="{_MT + ph + 5}" stroke="#333"/>')
        parts.append(f'<text x="{px(tx):.1f}" y="{_MT + ph + 18}" '
                     f'text-anchor="middle" font-size="11">{tx:g}</text>')
    for tv in _ticks(y_lo, y_hi):
        yy = _MT + ph - (tv - y_lo) / (y_hi - y_lo) * ph
        label = f"1e{tv:g}" if logy else f"{tv:g}"
        parts.append(f'<line x1="{_ML - 5}" y1="{yy:.1f}" x2="{_ML}" '
                     f'y2="{yy:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_ML - 8}" y="{yy + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{label}</text>')
    if xlabel:
        parts.append(f'<text x="{_ML + pw / 2}" y="{_H - 10}" '
                     f'text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="18" y="{_MT + ph / 2}" text-anchor="middle" '
                     f'font-size="12" transform="rotate(-90 18 {_MT + ph / 2})">'
                     f'{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(
            f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s["x"], s["y"])
            if y is not None and not (isinstance(y, float) and math.isnan(y)))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        if s.get("label"):
            ly = _MT + 16 + 16 * i
            parts.append(f'<line x1="{_ML + pw - 130}" y1="{ly - 4}" '
                         f'x2="{_ML + pw - 105}" y2="{ly - 4}" stroke="{color}" '
                         'stroke-width="1.5"/>')
            parts.append(f'<text x="{_ML + pw - 100}" y="{ly}" font-size="11">'
                         f'{escape(s["label"])}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
