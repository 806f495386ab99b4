"""Deterministic CSV and SVG writers.

Every file carries the toolkit version and the configuration hash in its
header, and every column name carries its unit.  Numbers are formatted
with a fixed number of significant digits so repeated runs are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np


@dataclass(frozen=True)
class Column:
    name: str
    unit: str
    values: object

    @property
    def label(self):
        return f"{self.name} [{self.unit}]" if self.unit else self.name


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def csv_text(columns, meta=()):
    """CSV with ``# key: value`` header lines followed by the table."""
    cols = list(columns)
    n = {len(np.atleast_1d(c.values)) if not isinstance(c.values, (list, tuple))
         else len(c.values) for c in cols}
    if len(n) > 1:
        raise ValueError("columns differ in length")
    buf = io.StringIO()
    for key, value in meta:
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c.label for c in cols])
    for row in zip(*[list(c.values) for c in cols]):
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# SVG

_W, _H = 640, 420
_L, _R, _T, _B = 70, 20, 40, 55
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _n(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def _range(values):
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _frame(title, xlabel, ylabel, xr, yr, meta):
    px = lambda x: _L + (x - xr[0]) / (xr[1] - xr[0]) * (_W - _L - _R)  # noqa: E731
    py = lambda y: _H - _B - (y - yr[0]) / (yr[1] - yr[0]) * (_H - _T - _B)  # noqa: E731
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">']
    for key, value in meta:
        parts.append(f"<!-- {escape(str(key))}: {escape(str(value))} -->")
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
                 f"{escape(title)}</text>")
    for t in _ticks(*xr):
        parts.append(f'<line x1="{_n(px(t))}" y1="{_H - _B}" x2="{_n(px(t))}" '
                     f'y2="{_H - _B + 5}" stroke="black"/>')
        parts.append(f'<text x="{_n(px(t))}" y="{_H - _B + 18}" text-anchor="middle">'
                     f"{t:g}</text>")
    for t in _ticks(*yr):
        parts.append(f'<line x1="{_L - 5}" y1="{_n(py(t))}" x2="{_L}" y2="{_n(py(t))}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{_L - 8}" y="{_n(py(t) + 4)}" text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{(_L + _W - _R) / 2:.1f}" y="{_H - 12}" text-anchor="middle">'
                 f"{escape(xlabel)}</text>")
    parts.append(f'<text x="16" y="{(_T + _H - _B) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(_T + _H - _B) / 2:.1f})">{escape(ylabel)}</text>')
    return parts, px, py


def _close(parts):
    parts.append(f'<rect x="{_L}" y="{_T}" width="{_W - _L - _R}" height="{_H - _T - _B}" '
                 f'fill="none" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_plot(series, *, title="", xlabel="", ylabel="", meta=(), markers=False):
    """SVG line plot.

    ``series`` is a list of ``(label, x, y)`` or ``(label, x, y, style)`` with
    style ``"line"`` or ``"points"``; NaNs break lines.
    """
    series = [tuple(s) + (("points" if markers else "line"),) * (4 - len(s)) for s in series]
    xs = [float(v) for s in series for v in np.ravel(s[1])]
    ys = [float(v) for s in series for v in np.ravel(s[2])]
    parts, px, py = _frame(title, xlabel, ylabel, _range(xs), _range(ys), meta)
    for i, (label, x, y, style) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        segs, cur = [], []
        for xv, yv in zip(np.ravel(x), np.ravel(y)):
            if math.isfinite(xv) and math.isfinite(yv):
                cur.append(f"{_n(px(xv))},{_n(py(yv))}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            if style == "points":
                for p in seg:
                    cx, cy = p.split(",")
                    parts.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            else:
                parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                             f'points="{" ".join(seg)}"/>')
        if label:
            ly = _T + 16 + 16 * i
            parts.append(f'<line x1="{_W - _R - 110}" y1="{ly - 4}" x2="{_W - _R - 92}" '
                         f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{_W - _R - 88}" y="{ly}">{escape(label)}</text>')
    return _close(parts)


def _color(t):
    """Perceptually ordered dark-blue to yellow ramp for ``t`` in [0, 1]."""
    stops = ((0.0, (48, 18, 59)), (0.35, (40, 120, 190)), (0.7, (120, 200, 110)),
             (1.0, (250, 230, 60)))
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % stops[-1][1]


def _pool(coord, z, axis, limit):
    """Max-pool ``z`` along ``axis`` into at most ``limit`` blocks."""
    n = coord.size
    step = max(1, int(math.ceil(n / limit)))
    if step == 1:
        return coord, z
    starts = np.arange(0, n, step)
    pooled = np.fmax.reduceat(z, starts, axis=axis)
    centres = np.add.reduceat(coord, starts) / np.diff(np.append(starts, n))
    return centres, pooled


def heatmap(x, y, z, *, title="", xlabel="", ylabel="", meta=(), max_cols=320, max_rows=160):
    """SVG raster of ``z[i, j]`` at ``(x[j], y[i])``.

    Large maps are max-pooled so narrow features survive.
    """
    x, y, z = np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    xs, zs = _pool(x, z, 1, max_cols)
    ys, zs = _pool(y, zs, 0, max_rows)
    finite = zs[np.isfinite(zs)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = hi - lo or 1.0

    def edges(a):
        if a.size == 1:
            return np.array([a[0] - 0.5, a[0] + 0.5])
        mid = 0.5 * (a[1:] + a[:-1])
        return np.concatenate([[a[0] - (mid[0] - a[0])], mid, [a[-1] + (a[-1] - mid[-1])]])

    ex, ey = edges(xs), edges(ys)
    parts, px, py = _frame(title, xlabel, ylabel, (float(ex.min()), float(ex.max())),
                           (float(ey.min()), float(ey.max())), meta)
    for i in range(zs.shape[0]):
        y0, y1 = sorted((py(ey[i]), py(ey[i + 1])))
        for j in range(zs.shape[1]):
            v = zs[i, j]
            if not math.isfinite(v):
                continue
            x0, x1 = sorted((px(ex[j]), px(ex[j + 1])))
            parts.append(f'<rect x="{_n(x0)}" y="{_n(y0)}" width="{_n(x1 - x0 + 0.3)}" '
                         f'height="{_n(y1 - y0 + 0.3)}" fill="{_color((v - lo) / span)}"/>')
    return _close(parts)
