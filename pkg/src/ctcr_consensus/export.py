"""File output: atomic writes, 12-digit CSV and small hand-built SVG figures."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from skimage.measure import find_contours

SIG_DIGITS = 12


def atomic_write(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{SIG_DIGITS}g}"
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def json_text(doc) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, complex):
            return [o.real, o.imag]
        raise TypeError(f"not serializable: {type(o)}")

    return json.dumps(doc, indent=2, sort_keys=True, default=default) + "\n"


# --------------------------------------------------------------------------
# SVG


class Svg:
    """Minimal SVG canvas mapping [0, tau_max]^2 onto a square plot area."""

    def __init__(self, tau_max: float, size: int = 600, pad: int = 50):
        self.tau_max, self.size, self.pad = tau_max, size, pad
        self.items: list[str] = []

    def x(self, t):
        return self.pad + t / self.tau_max * self.size

    def y(self, t):
        return self.pad + self.size - t / self.tau_max * self.size

    def rect(self, t1, t2, w, h, fill):
        self.items.append(
            f'<rect x="{self.x(t1):.2f}" y="{self.y(t2 + h):.2f}" width="{w / self.tau_max * self.size:.2f}" '
            f'height="{h / self.tau_max * self.size:.2f}" fill="{fill}" stroke="none"/>')

    def polyline(self, t1, t2, stroke, width=1.0):
        keep = (np.asarray(t1) >= -1e-9) & (np.asarray(t2) >= -1e-9)
        pts = " ".join(f"{self.x(a):.2f},{self.y(b):.2f}" for a, b, k in zip(t1, t2, keep) if k)
        if pts.count(",") >= 2:
            self.items.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def marker(self, t1, t2, label):
        self.items.append(f'<circle cx="{self.x(t1):.2f}" cy="{self.y(t2):.2f}" r="3" fill="black"/>')
        self.items.append(f'<text x="{self.x(t1) + 5:.2f}" y="{self.y(t2) - 5:.2f}" font-size="12">{label}</text>')

    def text(self) -> str:
        s, p, tm = self.size, self.pad, self.tau_max
        total = s + 2 * p
        axes = [
            f'<rect x="{p}" y="{p}" width="{s}" height="{s}" fill="none" stroke="black"/>',
            f'<text x="{p + s / 2:.0f}" y="{total - 10}" font-size="14" text-anchor="middle">tau1 [s]</text>',
            f'<text x="15" y="{p + s / 2:.0f}" font-size="14" transform="rotate(-90 15 {p + s / 2:.0f})" '
            'text-anchor="middle">tau2 [s]</text>',
        ]
        for k in range(int(tm) + 1):
            axes.append(f'<text x="{self.x(k):.1f}" y="{p + s + 16}" font-size="11" text-anchor="middle">{k}</text>')
            axes.append(f'<text x="{p - 8}" y="{self.y(k) + 4:.1f}" font-size="11" text-anchor="end">{k}</text>')
        body = "\n".join(self.items + axes)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" '
                f'viewBox="0 0 {total} {total}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _runs(row: np.ndarray):
    """(start, length, value) runs of equal values in a 1-D array."""
    cuts = np.nonzero(np.diff(row) != 0)[0] + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(row)]])
    return [(int(a), int(b - a), row[a]) for a, b in zip(starts, ends)]


def curves_svg(curves_by_factor, tau_max: float, points: dict | None = None) -> str:
    palette = ["#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b9770e", "#17a589"]
    svg = Svg(tau_max)
    for k, dsc in enumerate(curves_by_factor):
        for c in dsc.curves:
            svg.polyline(np.clip(c.tau1, 0, tau_max), np.clip(c.tau2, 0, tau_max),
                         palette[k % len(palette)], 1.6 if c.is_kernel else 0.8)
    for label, (a, b) in (points or {}).items():
        svg.marker(a, b, label)
    return svg.text()


def map_svg(smap, points: dict | None = None) -> str:
    """Stable cells shaded, crossing curves overlaid."""
    svg = Svg(smap.tau_max)
    h = smap.h
    fills = {0: "#9ecae1", 2: "#fdd0a2"}
    for i2, row in enumerate(smap.classes):
        for start, length, cls in _runs(row):
            if int(cls) in fills:
                svg.rect(start * h, i2 * h, length * h, h, fills[int(cls)])
    for dsc in smap.curves:
        for c in dsc.curves:
            svg.polyline(c.tau1, c.tau2, "#444444", 0.7)
    for label, (a, b) in (points or {}).items():
        svg.marker(a, b, label)
    return svg.text()


def surface_svg(surface, levels: int = 32) -> str:
    """Heat map of Re(s_dom) with its zero-level contour."""
    svg = Svg(surface.tau_max)
    re = surface.real
    finite = np.isfinite(re)
    if finite.any():
        lo, hi = float(np.nanmin(re)), float(np.nanmax(re))
        span = max(abs(lo), abs(hi), 1e-12)
        q = np.where(finite, np.rint((np.nan_to_num(re) / span) * levels), np.nan)
        h = surface.h
        for i2, row in enumerate(q):
            for start, length, v in _runs(np.nan_to_num(row, nan=10 * levels)):
                if v > 5 * levels:
                    continue
                frac = v / levels  # in [-1, 1]
                if frac < 0:
                    c = int(255 * (1 + frac))
                    fill = f"rgb({c},{c},255)"
                else:
                    c = int(255 * (1 - frac))
                    fill = f"rgb(255,{c},{c})"
                svg.rect(start * h, i2 * h, length * h, h, fill)
        ax = surface.axis
        for path in find_contours(np.where(finite, re, np.nanmax(re)), 0.0):
            t2 = np.interp(path[:, 0], np.arange(len(ax)), ax)
            t1 = np.interp(path[:, 1], np.arange(len(ax)), ax)
            svg.polyline(t1, t2, "black", 1.2)
    return svg.text()
