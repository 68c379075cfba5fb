"""Minimal static SVG charts: line/step series, histograms and scatter overlays."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .io import atomic_write_text

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = mag * min((1, 2, 5, 10), key=lambda s: abs(s * mag - raw))
    return np.arange(np.ceil(lo / step) * step, hi + 0.5 * step, step)


@dataclass
class Figure:
    """One panel with linear axes. Coordinates are mapped into a fixed pixel box."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 400
    margin: tuple[int, int, int, int] = (40, 20, 50, 70)  # top, right, bottom, left
    _items: list = field(default_factory=list)
    _x: list = field(default_factory=list)
    _y: list = field(default_factory=list)

    def _extend(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        self._x.extend(x[ok].tolist())
        self._y.extend(y[ok].tolist())
        return x, y

    def line(self, x, y, label: str = "", color: str | None = None, width: float = 1.5, dash: str | None = None):
        x, y = self._extend(x, y)
        self._items.append(("line", x, y, label, color, width, dash))
        return self

    def points(self, x, y, label: str = "", color: str | None = None, radius: float = 2.5, marker: str = "circle"):
        x, y = self._extend(x, y)
        self._items.append(("points", x, y, label, color, radius, marker))
        return self

    def bars(self, edges, heights, label: str = "", color: str | None = None):
        edges = np.asarray(edges, dtype=float)
        heights = np.asarray(heights, dtype=float)
        self._extend(edges, np.zeros_like(edges))
        self._extend(edges[:-1], heights)
        self._items.append(("bars", edges, heights, label, color))
        return self

    def _limits(self):
        xs, ys = np.array(self._x or [0.0, 1.0]), np.array(self._y or [0.0, 1.0])
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.04 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        top, right, bottom, left = self.margin
        pw, ph = self.width - left - right, self.height - top - bottom
        x0, x1, y0, y1 = self._limits()

        def sx(x):
            return left + (np.asarray(x) - x0) / (x1 - x0) * pw

        def sy(y):
            return top + ph - (np.asarray(y) - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
        for t in _nice_ticks(x0, x1):
            if x0 <= t <= x1:
                out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 4}" stroke="#333"/>')
                out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:.4g}</text>')
        for t in _nice_ticks(y0, y1):
            if y0 <= t <= y1:
                out.append(f'<line x1="{left - 4}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="#333"/>')
                out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.4g}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{top - 14}" text-anchor="middle" font-size="13">'
                   f'{escape(self.title)}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(self.ylabel)}</text>')
        legend = []
        for k, item in enumerate(self._items):
            kind = item[0]
            color = item[4] or PALETTE[k % len(PALETTE)]
            if kind == "line":
                _, x, y, label, _, width, dash = item
                ok = np.isfinite(x) & np.isfinite(y)
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x[ok]), sy(y[ok])))
                d = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')
            elif kind == "points":
                _, x, y, label, _, r, marker = item
                for a, b in zip(sx(x), sy(y)):
                    if marker == "cross":
                        out.append(f'<path d="M{a - r:.2f},{b - r:.2f}L{a + r:.2f},{b + r:.2f}'
                                   f'M{a - r:.2f},{b + r:.2f}L{a + r:.2f},{b - r:.2f}" stroke="{color}"/>')
                    else:
                        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r}" fill="{color}" fill-opacity="0.7"/>')
            else:
                _, edges, heights, label, _ = item
                for e0, e1, h in zip(edges[:-1], edges[1:], heights):
                    out.append(f'<rect x="{sx(e0):.2f}" y="{sy(h):.2f}" width="{max(sx(e1) - sx(e0), 0):.2f}" '
                               f'height="{max(sy(0) - sy(h), 0):.2f}" fill="{color}" fill-opacity="0.6" stroke="white"/>')
            if label:
                legend.append((label, color))
        for k, (label, color) in enumerate(legend):
            yk = top + 14 + 16 * k
            out.append(f'<rect x="{left + pw - 130}" y="{yk - 9}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{left + pw - 115}" y="{yk}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        return atomic_write_text(path, self.render())


def histogram(values, bins: int = 20, range_=None, density: bool = True, **kw) -> Figure:
    h, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=range_, density=density)
    return Figure(**kw).bars(edges, h)
