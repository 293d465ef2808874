"""Minimal self-contained SVG line plots (curves, points, shaded bands)."""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

PALETTE = ("#1f4e9c", "#d2691e", "#2e8b57", "#8b1a1a", "#6a3d9a", "#444444")


@dataclass
class Figure:
    title: str = ""
    xlabel: str = "x"
    ylabel: str = "y"
    width: int = 640
    height: int = 420
    curves: list = field(default_factory=list)  # (xs, ys, label, dashed)
    points: list = field(default_factory=list)  # (xs, ys, label)
    bands: list = field(default_factory=list)  # (lo, hi) shaded vertical bands
    vlines: list = field(default_factory=list)
    note: str = ""

    def curve(self, xs, ys, label="", dashed=False):
        self.curves.append((np.asarray(xs, float), np.asarray(ys, float), label, dashed))
        return self

    def scatter(self, xs, ys, label=""):
        self.points.append((np.asarray(xs, float), np.asarray(ys, float), label))
        return self

    def band(self, lo, hi):
        self.bands.append((float(lo), float(hi)))
        return self

    def vline(self, x):
        self.vlines.append(float(x))
        return self

    def _limits(self):
        xs = [c[0] for c in self.curves] + [p[0] for p in self.points]
        ys = [c[1] for c in self.curves] + [p[1] for p in self.points]
        xs = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        ys = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        ys = ys[np.isfinite(ys)]
        x0, x1 = float(np.min(xs)), float(np.max(xs))
        y0, y1 = (float(np.min(ys)), float(np.max(ys))) if ys.size else (0.0, 1.0)
        if x1 == x0:
            x1 = x0 + 1.0
        pad = 0.06 * (y1 - y0 if y1 > y0 else 1.0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        W, H = self.width, self.height
        ml, mr, mt, mb = 62, 16, 34, 46
        x0, x1, y0, y1 = self._limits()

        def sx(x):
            return ml + (np.asarray(x) - x0) / (x1 - x0) * (W - ml - mr)

        def sy(y):
            return H - mb - (np.asarray(y) - y0) / (y1 - y0) * (H - mt - mb)

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
               f'<rect width="{W}" height="{H}" fill="white"/>']
        for lo, hi in self.bands:
            a, b = sx(max(lo, x0)), sx(min(hi, x1))
            out.append(f'<rect x="{a:.2f}" y="{mt}" width="{max(b - a, 0.8):.2f}" height="{H - mt - mb}" '
                       'fill="#e34a33" fill-opacity="0.18"/>')
        for v in self.vlines:
            out.append(f'<line x1="{sx(v):.2f}" x2="{sx(v):.2f}" y1="{mt}" y2="{H - mb}" stroke="#999" '
                       'stroke-dasharray="2,3"/>')
        out.append(f'<rect x="{ml}" y="{mt}" width="{W - ml - mr}" height="{H - mt - mb}" fill="none" stroke="#333"/>')
        for t in np.linspace(x0, x1, 5):
            out.append(f'<text x="{sx(t):.1f}" y="{H - mb + 16}" font-size="11" text-anchor="middle">{t:.3g}</text>')
        for t in np.linspace(y0, y1, 5):
            out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" font-size="11" text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{(W + ml - mr) / 2:.1f}" y="{H - 10}" font-size="12" text-anchor="middle">'
                   f'{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{(H - mb + mt) / 2:.1f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 14 {(H - mb + mt) / 2:.1f})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{W / 2:.1f}" y="20" font-size="14" text-anchor="middle">{escape(self.title)}</text>')
        legend = []
        for i, (xs, ys, label, dashed) in enumerate(self.curves):
            color = PALETTE[i % len(PALETTE)]
            ok = np.isfinite(ys)
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(xs[ok]), sy(ys[ok])))
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>')
            if label:
                legend.append((label, color))
        for xs, ys, label in self.points:
            for a, b in zip(sx(xs), sy(ys)):
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3.5" fill="#c0392b"/>')
            if label:
                legend.append((label, "#c0392b"))
        for i, (label, color) in enumerate(legend):
            y = mt + 14 + 15 * i
            out.append(f'<line x1="{ml + 10}" x2="{ml + 28}" y1="{y - 4}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{ml + 33}" y="{y}" font-size="11">{escape(label)}</text>')
        if self.note:
            out.append(f'<text x="{W - mr}" y="{H - 4}" font-size="10" text-anchor="end" fill="#666">'
                       f'{escape(self.note)}</text>')
        out.append("</svg>")
        return "\n".join(out)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())
