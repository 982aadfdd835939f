"""Dependency-free SVG figures with byte-stable output."""

from __future__ import annotations

import math

import numpy as np

WIDTH, HEIGHT = 480, 480
MARGIN = 40
MAX_PATHS = 64
MAX_POINTS = 500
_COLORS = {"start": "#1f77b4", "end": "#d62728", "path": "#555555", "avg_kl": "#2ca02c", "gap_fwd": "#ff7f0e",
           "gap_bwd": "#9467bd"}


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _header(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f"{_escape(title)}</text>",
    ]


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Frame:
    """Maps data coordinates into the plotting square."""

    def __init__(self, xlo, xhi, ylo, yhi):
        if not xhi > xlo:
            xlo, xhi = xlo - 1.0, xhi + 1.0
        if not yhi > ylo:
            ylo, yhi = ylo - 1.0, yhi + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def px(self, x):
        return MARGIN + (x - self.xlo) / (self.xhi - self.xlo) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        return HEIGHT - MARGIN - (y - self.ylo) / (self.yhi - self.ylo) * (HEIGHT - 2 * MARGIN)

    def axes(self, xlabel: str, ylabel: str) -> list:
        x0, x1 = MARGIN, WIDTH - MARGIN
        y0, y1 = HEIGHT - MARGIN, MARGIN
        out = [
            f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        ]
        for frac in (0.0, 0.5, 1.0):
            xv = self.xlo + frac * (self.xhi - self.xlo)
            yv = self.ylo + frac * (self.yhi - self.ylo)
            px, py = _fmt(self.px(xv)), _fmt(self.py(yv))
            out.append(f'<text x="{px}" y="{y0 + 14}" text-anchor="middle" font-family="sans-serif" '
                       f'font-size="10">{_fmt(xv)}</text>')
            out.append(f'<text x="{x0 - 4}" y="{py}" text-anchor="end" font-family="sans-serif" '
                       f'font-size="10">{_fmt(yv)}</text>')
        out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 6}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_escape(xlabel)}</text>')
        out.append(f'<text x="12" y="{HEIGHT // 2}" text-anchor="middle" font-family="sans-serif" font-size="11" '
                   f'transform="rotate(-90 12 {HEIGHT // 2})">{_escape(ylabel)}</text>')
        return out


def _bounds(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    return lo - pad, hi + pad


def _project(states):
    """(paths, states, 2) plotting coordinates; 1-D paths are drawn against t."""
    n, m, d = states.shape
    if d == 1:
        t = np.broadcast_to(np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1), (n, m))
        return np.stack([t, states[..., 0]], axis=-1), ("t", "x")
    return states[..., :2], ("x_0", "x_1")


def trajectories_svg(states, seed: int = 0, title: str = "trajectories") -> str:
    """Scatter of both path ends plus polylines for up to 64 seeded paths."""
    states = np.asarray(states, dtype=np.float64)
    lines = _header(title)
    if states.ndim != 3 or states.shape[0] == 0 or states.shape[1] == 0:
        lines += _Frame(-1.0, 1.0, -1.0, 1.0).axes("x_0", "x_1")
        lines.append("</svg>")
        return "\n".join(lines) + "\n"
    xy, labels = _project(states)
    flat = xy.reshape(-1, 2)
    finite = flat[np.all(np.isfinite(flat), axis=1)]
    if finite.size:
        frame = _Frame(*_bounds(finite[:, 0]), *_bounds(finite[:, 1]))
    else:
        frame = _Frame(-1.0, 1.0, -1.0, 1.0)
    lines += frame.axes(*labels)
    rng = np.random.default_rng(seed)
    n = xy.shape[0]
    chosen = np.sort(rng.choice(n, MAX_PATHS, replace=False)) if n > MAX_PATHS else np.arange(n)
    lines.append(f'<g fill="none" stroke="{_COLORS["path"]}" stroke-width="0.6" stroke-opacity="0.6">')
    for j in chosen:
        pts = " ".join(f"{_fmt(frame.px(x))},{_fmt(frame.py(y))}" for x, y in xy[j] if math.isfinite(x + y))
        lines.append(f'<polyline points="{pts}"/>')
    lines.append("</g>")
    dots = np.sort(rng.choice(n, MAX_POINTS, replace=False)) if n > MAX_POINTS else np.arange(n)
    for key, idx in (("start", 0), ("end", -1)):
        lines.append(f'<g fill="{_COLORS[key]}" fill-opacity="0.7">')
        for j in dots:
            x, y = xy[j, idx]
            if math.isfinite(x + y):
                lines.append(f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="1.5"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def metrics_svg(records, title: str = "per half-epoch diagnostics") -> str:
    """Averaged KL and endpoint gaps against the half-epoch index (log scale)."""
    lines = _header(title)
    series = {}
    for key in ("avg_kl", "gap_fwd", "gap_bwd"):
        vals = [(r.half_epoch, getattr(r, key)) for r in records]
        vals = [(h, v) for h, v in vals if math.isfinite(v) and v > 0]
        if vals:
            series[key] = vals
    if not series:
        lines += _Frame(0.0, 1.0, -1.0, 1.0).axes("half-epoch", "log10 value")
        lines.append("</svg>")
        return "\n".join(lines) + "\n"
    hs = [h for vals in series.values() for h, _ in vals]
    logs = [math.log10(v) for vals in series.values() for _, v in vals]
    frame = _Frame(min(hs) - 0.5, max(hs) + 0.5, *_bounds(logs))
    lines += frame.axes("half-epoch", "log10 value")
    for i, (key, vals) in enumerate(series.items()):
        pts = " ".join(f"{_fmt(frame.px(h))},{_fmt(frame.py(math.log10(v)))}" for h, v in vals)
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{_COLORS[key]}" stroke-width="1.5"/>')
        lines.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * i}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="11" fill="{_COLORS[key]}">{key}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
