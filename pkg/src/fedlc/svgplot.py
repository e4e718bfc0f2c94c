"""Accuracy-vs-round curves as a self-contained SVG, no external renderer."""

from __future__ import annotations

import json
from pathlib import Path

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 160, 20, 45
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _read_curve(path) -> tuple[list[int], list[float]]:
    rounds, accs = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rounds.append(int(rec["round"]))
                accs.append(float(rec["test_acc"]))
    if not rounds:
        raise ValueError(f"{path} holds no round records")
    return rounds, accs


def emit_plot(metrics_paths, out_svg, labels: list[str] | None = None) -> Path:
    """One polyline per metrics file; axes are round vs test accuracy."""
    paths = [Path(p) for p in metrics_paths]
    if not paths:
        raise ValueError("need at least one metrics file to plot")
    curves = [_read_curve(p) for p in paths]
    if labels is None:
        labels = [p.parent.name + "/" + p.stem for p in paths]
    elif len(labels) != len(paths):
        raise ValueError(f"{len(labels)} labels for {len(paths)} metrics files")

    max_round = max(max(r) for r, _ in curves)
    min_round = min(min(r) for r, _ in curves)
    span = max(max_round - min_round, 1)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(r):
        return MARGIN_L + (r - min_round) / span * plot_w

    def sy(a):
        return MARGIN_T + (1.0 - a) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<text x="{MARGIN_L + plot_w / 2:.0f}" y="{HEIGHT - 8}" '
        f'text-anchor="middle" font-size="13">round</text>',
        f'<text x="14" y="{MARGIN_T + plot_h / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {MARGIN_T + plot_h / 2:.0f})">test accuracy</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" x2="{MARGIN_L}" y2="{y:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{frac:.2f}</text>')
    for r in sorted({min_round, max_round, (min_round + max_round) // 2}):
        x = sx(r)
        parts.append(f'<line x1="{x:.1f}" y1="{HEIGHT - MARGIN_B}" x2="{x:.1f}" '
                     f'y2="{HEIGHT - MARGIN_B + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{HEIGHT - MARGIN_B + 17}" text-anchor="middle" '
                     f'font-size="11">{r}</text>')

    for i, ((rounds, accs), label) in enumerate(zip(curves, labels)):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(r):.2f},{sy(a):.2f}" for r, a in zip(rounds, accs))
        parts.append(f'<polyline id="run{i}" points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 16 + 18 * i
        parts.append(f'<line x1="{WIDTH - MARGIN_R + 8}" y1="{ly - 4}" '
                     f'x2="{WIDTH - MARGIN_R + 28}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R + 33}" y="{ly}" '
                     f'font-size="11">{label}</text>')
    parts.append("</svg>")

    out = Path(out_svg)
    out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return out
