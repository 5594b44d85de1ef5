"""Minimal SVG timelines: ground-truth and predicted segments, one pair of bars per trial."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from .metrics import extract_segments

# qualitative palette; classes beyond its length wrap around
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
           "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac")

_WIDTH = 800
_BAR = 14
_LABEL = 150


def _bar(labels, y: float, scale: float) -> list[str]:
    out = []
    for seg in extract_segments(labels):
        x = _LABEL + seg.start * scale
        w = max((seg.end - seg.start) * scale, 0.5)
        color = PALETTE[seg.label % len(PALETTE)]
        out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{_BAR}" fill="{color}">'
                   f"<title>class {seg.label}: {seg.start}-{seg.end}</title></rect>")
    return out


def timeline_svg(rows: Sequence[tuple[str, Sequence[int], Sequence[int]]], class_names: Sequence[str] = ()) -> str:
    """``rows`` holds (trial id, ground truth, prediction) triples."""
    longest = max((len(gt) for _, gt, _ in rows), default=1)
    scale = (_WIDTH - _LABEL - 10) / max(longest, 1)
    parts, y = [], 10.0
    for name, gt, pred in rows:
        parts.append(f'<text x="4" y="{y + 11:.1f}" font-size="11">{escape(name)} GT</text>')
        parts += _bar(gt, y, scale)
        y += _BAR + 2
        parts.append(f'<text x="4" y="{y + 11:.1f}" font-size="11">{escape(name)} pred</text>')
        parts += _bar(pred, y, scale)
        y += _BAR + 12
    for i, cname in enumerate(class_names):
        x = _LABEL + 110 * i
        parts.append(f'<rect x="{x}" y="{y:.1f}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{y + 9:.1f}" font-size="11">{escape(str(cname))}</text>')
    if class_names:
        y += 20
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{y:.0f}" '
            f'viewBox="0 0 {_WIDTH} {y:.0f}" font-family="sans-serif">')
    return "\n".join([head, *parts, "</svg>"]) + "\n"
