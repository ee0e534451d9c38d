"""Static SVG report graphics: score-surface heat map and per-fold beta bars.

Hand-rolled SVG keeps the outputs dependency-free and byte-stable across
reruns (no embedded timestamps or generated ids).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .postprocess import ThresholdPair, ThresholdSurface


def _color(t: float) -> str:
    """Blue-to-red ramp for t in [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    r = int(40 + 215 * t)
    g = int(60 + 40 * (1 - abs(2 * t - 1)))
    b = int(255 - 215 * t)
    return f"rgb({r},{g},{b})"


def surface_heatmap_svg(surface: ThresholdSurface, path: str | Path, cell: int = 10) -> None:
    """Render the score surface as a colored grid, alpha down, beta across."""
    score = surface.score
    lo, hi = float(score.min()), float(score.max())
    span = hi - lo if hi > lo else 1.0
    a_n, b_n = score.shape
    margin = 60
    width = margin + b_n * cell + 20
    height = margin + a_n * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="20" font-size="12" font-family="monospace">'
        f"score surface (min={lo:.4f}, max={hi:.4f})</text>",
        f'<text x="10" y="{margin - 8}" font-size="10" font-family="monospace">alpha \\ beta</text>',
    ]
    for ai in range(a_n):
        for bi in range(b_n):
            t = (float(score[ai, bi]) - lo) / span
            x = margin + bi * cell
            y = margin + ai * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_color(t)}"/>'
            )
    step_a = max(1, a_n // 5)
    step_b = max(1, b_n // 5)
    for ai in range(0, a_n, step_a):
        y = margin + ai * cell + cell
        parts.append(
            f'<text x="5" y="{y}" font-size="9" font-family="monospace">{surface.alpha_grid[ai]:.2f}</text>'
        )
    for bi in range(0, b_n, step_b):
        x = margin + bi * cell
        parts.append(
            f'<text x="{x}" y="{margin + a_n * cell + 14}" font-size="9" '
            f'font-family="monospace">{surface.beta_grid[bi]:.2f}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def fold_beta_bars_svg(pairs: Sequence[ThresholdPair], path: str | Path) -> None:
    """Bar chart of the per-fold optimal beta values."""
    betas = [p.beta for p in pairs]
    top = max(max(betas), 1e-9)
    bar_w, gap, chart_h, margin = 40, 16, 160, 40
    width = margin * 2 + len(betas) * (bar_w + gap)
    height = chart_h + margin * 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="20" font-size="12" font-family="monospace">per-fold optimal beta</text>',
    ]
    for i, beta in enumerate(betas):
        h = int(chart_h * beta / top)
        x = margin + i * (bar_w + gap)
        y = margin + chart_h - h
        parts.append(f'<rect x="{x}" y="{y}" width="{bar_w}" height="{h}" fill="rgb(70,110,220)"/>')
        parts.append(
            f'<text x="{x}" y="{margin + chart_h + 14}" font-size="10" font-family="monospace">f{i}</text>'
        )
        parts.append(
            f'<text x="{x}" y="{y - 4}" font-size="9" font-family="monospace">{beta:.2f}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def surface_mean(surfaces: Sequence[ThresholdSurface]) -> ThresholdSurface:
    """Cell-wise mean of same-grid surfaces, for a combined heat map."""
    first = surfaces[0]
    acc_p = np.mean([s.acc_p for s in surfaces], axis=0)
    acc_s = np.mean([s.acc_s for s in surfaces], axis=0)
    score = np.mean([s.score for s in surfaces], axis=0)
    return ThresholdSurface(
        first.alpha_grid, first.beta_grid, acc_p, acc_s, score, sum(s.n for s in surfaces)
    )
