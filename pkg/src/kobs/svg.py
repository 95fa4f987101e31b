"""Minimal SVG rendering for bar charts and heatmaps (no plotting runtime)."""

from __future__ import annotations

from html import escape
from typing import Sequence

import numpy as np

W, H = 520, 240


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def bar_chart(title: str, labels: Sequence[str], values: Sequence[float],
              series: Sequence[str] | None = None) -> tuple[str, int]:
    """Bar chart panel. ``values`` may be 2-D (groups x series) for grouped bars."""
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    if vals.shape[0] == 1 and len(labels) != 1:
        vals = vals.T
    groups, nser = vals.shape
    finite = vals[np.isfinite(vals)]
    vmax = max(float(finite.max()) if finite.size else 1.0, 1e-12)
    vmin = min(float(finite.min()) if finite.size else 0.0, 0.0)
    left, bottom, top = 40, 40, 30
    plot_w, plot_h = W - left - 10, H - top - bottom
    gw = plot_w / max(groups, 1)
    bw = gw * 0.8 / nser
    zero_y = top + plot_h * vmax / (vmax - vmin)
    parts = [f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
             f'<line x1="{left}" y1="{_fmt(zero_y)}" x2="{W - 10}" y2="{_fmt(zero_y)}" stroke="black"/>']
    palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"]
    for g in range(groups):
        for s in range(nser):
            v = vals[g, s]
            if not np.isfinite(v):
                continue
            hgt = plot_h * abs(v) / (vmax - vmin)
            x = left + g * gw + gw * 0.1 + s * bw
            y = zero_y - hgt if v >= 0 else zero_y
            parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bw)}" height="{_fmt(hgt)}" '
                         f'fill="{palette[s % len(palette)]}"><title>{escape(labels[g])}: {v:.4g}</title></rect>')
        parts.append(f'<text x="{_fmt(left + g * gw + gw / 2)}" y="{H - bottom + 15}" font-size="10" '
                     f'text-anchor="middle">{escape(labels[g])}</text>')
    if series:
        for s, name in enumerate(series):
            parts.append(f'<rect x="{W - 120}" y="{30 + 14 * s}" width="10" height="10" fill="{palette[s % len(palette)]}"/>'
                         f'<text x="{W - 105}" y="{39 + 14 * s}" font-size="10">{escape(name)}</text>')
    return "\n".join(parts), H


def heatmap(title: str, M: np.ndarray, col_labels: Sequence[str]) -> tuple[str, int]:
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    cell = min(24.0, (W - 50) / max(cols, 1))
    height = int(40 + cell * rows + 20)
    vmax = float(np.max(M)) if M.size and np.max(M) > 0 else 1.0
    parts = [f'<text x="40" y="18" font-size="13">{escape(title)}</text>']
    for i in range(rows):
        for j in range(cols):
            shade = int(255 - 255 * M[i, j] / vmax)
            parts.append(f'<rect x="{_fmt(40 + j * cell)}" y="{_fmt(30 + i * cell)}" width="{_fmt(cell)}" '
                         f'height="{_fmt(cell)}" fill="rgb(255,{shade},{shade})"/>')
    for j, lab in enumerate(col_labels):
        parts.append(f'<text x="{_fmt(40 + (j + 0.5) * cell)}" y="{_fmt(30 + rows * cell + 12)}" '
                     f'font-size="9" text-anchor="middle">{escape(lab)}</text>')
    return "\n".join(parts), height


def stack(panels: Sequence[tuple[str, int]]) -> str:
    y = 0
    body = []
    for content, h in panels:
        body.append(f'<g transform="translate(0,{y})">\n{content}\n</g>')
        y += h
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{y}" '
            f'viewBox="0 0 {W} {y}" font-family="sans-serif">\n' + "\n".join(body) + "\n</svg>\n")
