"""Dependency-free SVG line charts for sweep CSVs."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .errors import DomainError

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def _escape(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _float(v):
    try:
        f = float(v)
    except (TypeError, ValueError):
        return None
    return f if math.isfinite(f) else None


def _series_key(v):
    f = _float(v)
    return (0, f, "") if f is not None else (1, 0.0, str(v))


def plot(csv_path, x: str, y: str, series: str | None = None, out=None, log_x: bool = False,
         limit: str | None = "limit_bits", title: str | None = None, aggregate: str = "mean") -> Path:
    """Render one polyline per ``series`` value; rows sharing an x are averaged.

    When the ``limit`` column exists, a dashed horizontal guide is drawn at
    each distinct limit value. Returns the path of the written SVG.
    """
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
        fields = rows[0].keys() if rows else []
    for f in (x, y) + ((series,) if series else ()):
        if f not in fields:
            raise DomainError(f"field {f!r} not in {csv_path}")
    groups: dict = {}
    limits: dict = {}
    for row in rows:
        xv, yv = _float(row[x]), _float(row[y])
        if xv is None or yv is None or (log_x and xv <= 0):
            continue
        key = row[series] if series else ""
        groups.setdefault(key, {}).setdefault(xv, []).append(yv)
        if limit and limit in row and _float(row[limit]) is not None:
            limits.setdefault(round(_float(row[limit]), 9), key)
    if not groups:
        raise DomainError("no plottable rows")
    curves = []
    for key in sorted(groups, key=_series_key):
        pts = sorted((xv, sorted(ys)[len(ys) // 2] if aggregate == "median" else sum(ys) / len(ys))
                     for xv, ys in groups[key].items())
        curves.append((key, pts))

    width, height = 800, 500
    left, right, top, bottom = 80, 180, 50, 70
    pw, ph = width - left - right, height - top - bottom
    xs = [p[0] for _, pts in curves for p in pts]
    ys = [p[1] for _, pts in curves for p in pts] + list(limits)
    tx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    x0, x1 = min(map(tx, xs)), max(map(tx, xs))
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (tx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out_lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                 f'viewBox="0 0 {width} {height}">',
                 '<rect width="100%" height="100%" fill="white"/>',
                 f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    if title:
        out_lines.append(f'<text x="{left + pw / 2}" y="28" text-anchor="middle" font-size="16" '
                         f'font-family="sans-serif">{_escape(title)}</text>')
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        out_lines.append(f'<text x="{left - 8}" y="{py(yv) + 4:.1f}" text-anchor="end" font-size="11" '
                         f'font-family="sans-serif">{yv:.3g}</text>')
        tv = x0 + (x1 - x0) * i / 4
        label = f"{10 ** tv:.3g}" if log_x else f"{tv:.3g}"
        xpix = left + (tv - x0) / (x1 - x0) * pw
        out_lines.append(f'<text x="{xpix:.1f}" y="{top + ph + 18}" text-anchor="middle" font-size="11" '
                         f'font-family="sans-serif">{label}</text>')
    out_lines.append(f'<text x="{left + pw / 2}" y="{height - 20}" text-anchor="middle" font-size="13" '
                     f'font-family="sans-serif">{_escape(x)}{" (log)" if log_x else ""}</text>')
    out_lines.append(f'<text x="20" y="{top + ph / 2}" text-anchor="middle" font-size="13" '
                     f'font-family="sans-serif" transform="rotate(-90 20 {top + ph / 2})">{_escape(y)}</text>')
    for lv in sorted(limits):
        out_lines.append(f'<line class="limit" x1="{left}" x2="{left + pw}" y1="{py(lv):.2f}" '
                         f'y2="{py(lv):.2f}" stroke="#555" stroke-dasharray="6,4"/>')
    for i, (key, pts) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
        out_lines.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="2" '
                         f'points="{coords}"/>')
        for a, b in pts:
            out_lines.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 20 * i
        name = f"{series}={key}" if series else y
        out_lines.append(f'<line x1="{left + pw + 15}" x2="{left + pw + 40}" y1="{ly}" y2="{ly}" '
                         f'stroke="{color}" stroke-width="2"/>')
        out_lines.append(f'<text class="legend" x="{left + pw + 46}" y="{ly + 4}" font-size="12" '
                         f'font-family="sans-serif">{_escape(name)}</text>')
    out_lines.append("</svg>")
    out = Path(out) if out else csv_path.with_suffix(".svg")
    out.write_text("\n".join(out_lines) + "\n")
    return out
