"""Standalone SVG trajectory figures, written as plain XML text."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
SIZE = 520
MARGIN = 40
LEGEND_W = 150


def _color(i: int) -> str:
    return PALETTE[i % len(PALETTE)]


def _points(xy: np.ndarray, tf) -> str:
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in (tf(p) for p in xy))


def trajectory_svg(positions, t_obs: int | None = None, prediction=None,
                   title: str = "") -> str:
    """Observed steps solid, ground-truth future dashed, prediction dotted.

    ``positions [T, N, 2]``; ``prediction [t_pred, N, 2]`` starts after step
    ``t_obs - 1`` and may be ``None``. Without ``t_obs`` the whole episode is
    drawn as observed.
    """
    pos = np.asarray(positions, dtype=np.float64)
    t_total, n, _ = pos.shape
    t_obs = t_total if t_obs is None else max(1, min(int(t_obs), t_total))
    pred = None if prediction is None or len(prediction) == 0 else np.asarray(prediction, float)
    pts = [pos.reshape(-1, 2)] + ([pred.reshape(-1, 2)] if pred is not None else [])
    allp = np.concatenate(pts)
    lo, hi = allp.min(0), allp.max(0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (SIZE - 2 * MARGIN) / span
    centre = (lo + hi) / 2

    def tf(p):
        return (SIZE / 2 + (p[0] - centre[0]) * scale,
                SIZE / 2 - (p[1] - centre[1]) * scale)

    width = SIZE + LEGEND_W
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{SIZE}" '
        f'viewBox="0 0 {width} {SIZE}">',
        f'<rect x="0" y="0" width="{width}" height="{SIZE}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">'
                   f'{escape(title)}</text>')
    for i in range(n):
        c = _color(i)
        out.append(f'<g class="agent" id="agent-{i}">')
        out.append(f'<polyline class="observed" fill="none" stroke="{c}" stroke-width="2" '
                   f'points="{_points(pos[:t_obs, i], tf)}"/>')
        if t_obs < t_total:
            out.append(f'<polyline class="future" fill="none" stroke="{c}" stroke-width="1.5" '
                       f'stroke-dasharray="6,4" points="{_points(pos[t_obs - 1:, i], tf)}"/>')
        if pred is not None:
            path = np.concatenate([pos[t_obs - 1:t_obs, i], pred[:, i]])
            out.append(f'<polyline class="prediction" fill="none" stroke="{c}" stroke-width="2.5" '
                       f'stroke-dasharray="1,4" stroke-linecap="round" points="{_points(path, tf)}"/>')
        x0, y0 = tf(pos[0, i])
        out.append(f'<circle cx="{x0:.2f}" cy="{y0:.2f}" r="3" fill="{c}"/>')
        out.append("</g>")
    lx = SIZE + 10
    out.append('<g class="legend" font-family="sans-serif" font-size="12">')
    rows = [("observed", ""), ("ground truth", ' stroke-dasharray="6,4"'),
            ("prediction", ' stroke-dasharray="1,4" stroke-linecap="round"')]
    y = MARGIN
    for label, dash in rows:
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 30}" y2="{y}" stroke="black" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 36}" y="{y + 4}">{label}</text>')
        y += 20
    for i in range(n):
        out.append(f'<rect x="{lx}" y="{y - 6}" width="12" height="12" fill="{_color(i)}"/>')
        out.append(f'<text x="{lx + 18}" y="{y + 4}">agent {i}</text>')
        y += 18
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
