"""Tiny hand-rolled SVG output: a scatter for biplots, lines for profiles.

The computed tables are the real interface; these charts are a reading
aid, so the markup stays minimal (axes, ticks, points, labels) and has no
dependency on a plotting stack.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 60, 20, 36, 48

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / n
    mag = 10.0 ** int(f"{raw:e}".split("e")[1])
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = step * (int(lo / step) - 1)
    ticks = []
    t = start
    while t <= hi + step / 2:
        if t >= lo - step / 2:
            ticks.append(round(t, 10))
        t += step
    return ticks


class _Frame:
    """Maps data coordinates to pixel coordinates inside the axes box."""

    def __init__(self, xlo, xhi, ylo, yhi):
        pad_x = 0.05 * (xhi - xlo or 1.0)
        pad_y = 0.05 * (yhi - ylo or 1.0)
        self.xlo, self.xhi = xlo - pad_x, xhi + pad_x
        self.ylo, self.yhi = ylo - pad_y, yhi + pad_y

    def x(self, v: float) -> float:
        frac = (v - self.xlo) / (self.xhi - self.xlo)
        return _ML + frac * (_W - _ML - _MR)

    def y(self, v: float) -> float:
        frac = (v - self.ylo) / (self.yhi - self.ylo)
        return _H - _MB - frac * (_H - _MT - _MB)


def _open_svg(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<title>{escape(title)}</title>',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]


def _axes(frame: _Frame, out: list[str], xlabel: str, ylabel: str):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    out.append(f'<g stroke="black" fill="none">'
               f'<path d="M {x0} {y1} V {y0} H {x1}"/></g>')
    out.append('<g font-family="sans-serif" font-size="10" fill="black">')
    for t in _ticks(frame.xlo, frame.xhi):
        px = frame.x(t)
        out.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                   f'y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px)}" y="{y0 + 16}" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(frame.ylo, frame.yhi):
        py = frame.y(t)
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" '
                   f'y2="{_fmt(py)}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{_fmt(py + 3)}" '
                   f'text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.0f}" y="{_H - 10}" '
               f'text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
               f'font-size="12" transform="rotate(-90 14 {(y0 + y1) / 2:.0f})">'
               f'{escape(ylabel)}</text>')
    out.append('</g>')


def scatter_svg(points, title: str, xlabel: str, ylabel: str) -> str:
    """Labeled scatter; ``points`` is (x, y, label, kind) with kinds drawn
    as circles ("row") or squares (anything else)."""
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    frame = _Frame(min(xs + [0]), max(xs + [0]), min(ys + [0]), max(ys + [0]))
    out = _open_svg(title)
    _axes(frame, out, xlabel, ylabel)
    # zero lines help read a biplot
    out.append(f'<line x1="{_ML}" y1="{_fmt(frame.y(0))}" x2="{_W - _MR}" '
               f'y2="{_fmt(frame.y(0))}" stroke="#cccccc" stroke-dasharray="4 3"/>')
    out.append(f'<line x1="{_fmt(frame.x(0))}" y1="{_MT}" x2="{_fmt(frame.x(0))}" '
               f'y2="{_H - _MB}" stroke="#cccccc" stroke-dasharray="4 3"/>')
    out.append('<g font-family="sans-serif" font-size="10">')
    for x, y, label, kind in points:
        px, py = frame.x(x), frame.y(y)
        if kind == "row":
            out.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="3.5" '
                       f'fill="{_PALETTE[0]}"/>')
        else:
            out.append(f'<rect x="{_fmt(px - 3)}" y="{_fmt(py - 3)}" '
                       f'width="6" height="6" fill="{_PALETTE[1]}"/>')
        out.append(f'<text x="{_fmt(px + 5)}" y="{_fmt(py - 4)}">'
                   f'{escape(label)}</text>')
    out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def interval_chart_svg(x_labels, series, title: str, ylabel: str) -> str:
    """Point-and-whisker chart: per x position, one (mean, lo, hi) triple
    per named series, drawn with small horizontal offsets."""
    x_labels = list(x_labels)
    flat = [v for vals in series.values() for v in vals if v is not None]
    ys = [y for triple in flat for y in triple]
    ylo, yhi = (min(ys + [0.0]), max(ys + [0.0])) if ys else (-1.0, 1.0)
    frame = _Frame(-0.5, max(len(x_labels) - 1, 1) + 0.5, ylo, yhi)
    out = _open_svg(title)
    _axes(frame, out, "week", ylabel)
    out.append(f'<line x1="{_ML}" y1="{_fmt(frame.y(0))}" x2="{_W - _MR}" '
               f'y2="{_fmt(frame.y(0))}" stroke="#cccccc" stroke-dasharray="4 3"/>')
    out.append('<g font-family="sans-serif" font-size="10" fill="black">')
    for i, lab in enumerate(x_labels):
        out.append(f'<text x="{_fmt(frame.x(i))}" y="{_H - _MB + 28}" '
                   f'text-anchor="middle">{escape(lab)}</text>')
    out.append('</g>')
    n_series = max(len(series), 1)
    legend_y = _MT + 6
    for k, (name, vals) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        shift = (k - (n_series - 1) / 2) * min(0.12, 0.8 / n_series)
        for i, triple in enumerate(vals):
            if triple is None:
                continue
            mean, lo, hi = triple
            px = frame.x(i + shift)
            out.append(f'<line x1="{_fmt(px)}" y1="{_fmt(frame.y(lo))}" '
                       f'x2="{_fmt(px)}" y2="{_fmt(frame.y(hi))}" '
                       f'stroke="{color}" stroke-width="1.5"/>')
            out.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(frame.y(mean))}" '
                       f'r="2.5" fill="{color}"/>')
        out.append(f'<rect x="{_W - _MR - 130}" y="{legend_y}" width="10" '
                   f'height="3" fill="{color}"/>')
        out.append(f'<text x="{_W - _MR - 116}" y="{legend_y + 5}" '
                   f'font-family="sans-serif" font-size="10">'
                   f'{escape(name)}</text>')
        legend_y += 14
    out.append('</svg>')
    return "\n".join(out) + "\n"


def line_chart_svg(x_labels, series, title: str, ylabel: str) -> str:
    """One polyline per named series over categorical x positions.

    ``series`` maps a name to a list of y values aligned with
    ``x_labels``; None entries break the line.
    """
    x_labels = list(x_labels)
    ys = [y for vals in series.values() for y in vals if y is not None]
    ylo, yhi = (min(ys + [0.0]), max(ys + [1.0])) if ys else (0.0, 1.0)
    frame = _Frame(0.0, max(len(x_labels) - 1, 1), ylo, yhi)
    out = _open_svg(title)
    _axes(frame, out, "week", ylabel)
    out.append('<g font-family="sans-serif" font-size="10" fill="black">')
    for i, lab in enumerate(x_labels):
        out.append(f'<text x="{_fmt(frame.x(i))}" y="{_H - _MB + 28}" '
                   f'text-anchor="middle">{escape(lab)}</text>')
    out.append('</g>')
    legend_y = _MT + 6
    for k, (name, vals) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        run: list[str] = []
        chunks = []
        for i, y in enumerate(vals):
            if y is None:
                if run:
                    chunks.append(run)
                run = []
            else:
                run.append(f"{_fmt(frame.x(i))},{_fmt(frame.y(y))}")
        if run:
            chunks.append(run)
        for chunk in chunks:
            if len(chunk) == 1:
                px, py = chunk[0].split(",")
                out.append(f'<circle cx="{px}" cy="{py}" r="2.5" '
                           f'fill="{color}"/>')
            else:
                out.append(f'<polyline points="{" ".join(chunk)}" fill="none" '
                           f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<rect x="{_W - _MR - 130}" y="{legend_y}" width="10" '
                   f'height="3" fill="{color}"/>')
        out.append(f'<text x="{_W - _MR - 116}" y="{legend_y + 5}" '
                   f'font-family="sans-serif" font-size="10">'
                   f'{escape(name)}</text>')
        legend_y += 14
    out.append('</svg>')
    return "\n".join(out) + "\n"
