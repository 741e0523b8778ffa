"""Minimal SVG line charts of one metric against degree, one series per model."""
from __future__ import annotations

from xml.sax.saxutils import escape

from moebma.models import MetricsRecord

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H, PAD = 640, 400, 60


def line_chart(records: list[MetricsRecord], metric: str, title: str = "") -> str:
    series: dict[str, list[tuple[int, float]]] = {}
    for r in records:
        v = getattr(r, metric)
        if v is not None:
            series.setdefault(r.model, []).append((r.degree, v))
    if not series:
        raise ValueError(f"no values for metric {metric!r}")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(y):
        return H - PAD - (y - y0) / (y1 - y0) * (H - 2 * PAD)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<text x="{W / 2}" y="20" text-anchor="middle">{escape(title or metric)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">degree</text>',
        f'<text x="{PAD - 8}" y="{sy(y0):.1f}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{PAD - 8}" y="{sy(y1):.1f}" text-anchor="end">{y1:.4g}</text>',
    ]
    for d in sorted(set(xs)):
        parts.append(f'<text x="{sx(d):.1f}" y="{H - PAD + 16}" text-anchor="middle">{d}</text>')
    for i, (model, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = sorted(pts)
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        parts.append(f'<text x="{W - PAD + 5}" y="{PAD + 16 * i}" fill="{color}">{escape(model)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
