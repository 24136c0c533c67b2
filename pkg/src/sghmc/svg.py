"""Minimal self-contained SVG plots: line, scatter and step series with axes and a legend."""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    kind: str = "line"  # line | scatter | step
    color: str | None = None


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 420
    series: list = field(default_factory=list)

    def line(self, x, y, label, color=None):
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, "line", color))
        return self

    def scatter(self, x, y, label, color=None):
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, "scatter", color))
        return self

    def step(self, edges, heights, label, color=None):
        """Histogram outline from ``len(heights) + 1`` bin edges."""
        edges = np.asarray(edges, float)
        heights = np.asarray(heights, float)
        x = np.repeat(edges, 2)[1:-1]
        y = np.repeat(heights, 2)
        self.series.append(Series(x, y, label, "step", color))
        return self

    def _limits(self):
        xs = np.concatenate([s.x[np.isfinite(s.x)] for s in self.series])
        ys = np.concatenate([s.y[np.isfinite(s.y)] for s in self.series])
        lims = []
        for v in (xs, ys):
            lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
            if hi == lo:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.04 * (hi - lo)
            lims.append((lo - pad, hi + pad))
        return lims

    def render(self) -> str:
        if not self.series:
            raise ValueError("plot has no series")
        (x0, x1), (y0, y1) = self._limits()
        left, right, top, bottom = 64, 150, 36, 48
        pw = self.width - left - right
        ph = self.height - top - bottom

        def px(x):
            return left + (x - x0) / (x1 - x0) * pw

        def py(y):
            return top + (1.0 - (y - y0) / (y1 - y0)) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
        for t in np.linspace(x0, x1, 6):
            out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t:.3g}</text>')
        for t in np.linspace(y0, y1, 6):
            out.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
            out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{top - 14}" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(self.ylabel)}</text>')
        for k, s in enumerate(self.series):
            color = s.color or PALETTE[k % len(PALETTE)]
            ok = np.isfinite(s.x) & np.isfinite(s.y)
            pts = list(zip(px(s.x[ok]), py(s.y[ok])))
            if s.kind == "scatter":
                out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{color}"/>' for a, b in pts)
            else:
                path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.4"/>')
            ly = top + 14 + 16 * k
            lx = left + pw + 10
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="3"/>')
            out.append(f'<text x="{lx + 24}" y="{ly}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
        return path
