"""Minimal SVG figures: a proportion heatmap and line charts with SE ribbons.

CSV files are the real outputs; these are quick looks that need nothing
beyond the standard library.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _doc(width, height, body, comment=None) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" ' \
           f'font-family="sans-serif" font-size="11">\n'
    if comment:
        head += f"<!-- {escape(comment).replace('--', '- -')} -->\n"
    return head + '<rect width="100%" height="100%" fill="white"/>\n' + "".join(body) + "</svg>\n"


def _shade(v: float) -> str:
    if not math.isfinite(v):
        return "#cccccc"
    v = min(max(v, 0.0), 1.0)
    # white -> dark blue
    r = int(255 - v * (255 - 8))
    g = int(255 - v * (255 - 48))
    b = int(255 - v * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(row_labels, col_labels, values, title="", comment=None) -> str:
    values = np.asarray(values, dtype=float)
    cell_w, cell_h = 64, 20
    left = 8 + 7 * max(len(s) for s in row_labels)
    top = 40 + 6 * max(len(s) for s in col_labels)
    width = left + cell_w * len(col_labels) + 20
    height = top + cell_h * len(row_labels) + 20
    body = [f'<text x="{left}" y="16" font-size="13">{escape(title)}</text>\n']
    for j, c in enumerate(col_labels):
        x = left + j * cell_w + cell_w / 2
        body.append(f'<text x="{x:.1f}" y="{top - 6}" transform="rotate(-45 {x:.1f} {top - 6})">'
                    f'{escape(c)}</text>\n')
    for i, r in enumerate(row_labels):
        y = top + i * cell_h
        body.append(f'<text x="{left - 4}" y="{y + 14}" text-anchor="end">{escape(r)}</text>\n')
        for j in range(len(col_labels)):
            v = values[i, j]
            x = left + j * cell_w
            body.append(f'<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" '
                        f'fill="{_shade(v)}" stroke="#888" stroke-width="0.5"/>\n')
            label = "fail" if not math.isfinite(v) else f"{v:.2f}"
            color = "white" if math.isfinite(v) and v > 0.55 else "black"
            body.append(f'<text x="{x + cell_w / 2}" y="{y + 14}" text-anchor="middle" '
                        f'fill="{color}">{label}</text>\n')
    return _doc(width, height, body, comment)


def curve_svg(series: dict, title="", xlabel="n", ylabel="", log_x=True, comment=None) -> str:
    """``series`` maps a label to (x, y, se) arrays; ribbons span y +/- 2 se."""
    width, height = 560, 360
    left, right, top, bottom = 70, 130, 30, 45
    pw, ph = width - left - right, height - top - bottom
    xs, lo, hi = [], [], []
    for x, y, se in series.values():
        x, y, se = (np.asarray(a, float) for a in (x, y, se))
        keep = np.isfinite(y) & ((x > 0) if log_x else True)
        xs.extend(x[keep])
        s = np.nan_to_num(se[keep])
        lo.extend(y[keep] - 2 * s)
        hi.extend(y[keep] + 2 * s)
    body = [f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>\n']
    if not xs:
        return _doc(width, height, body + ['<text x="80" y="80">no data</text>\n'], comment)
    tx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    x0, x1 = tx(min(xs)), tx(max(xs))
    y0, y1 = min(lo), max(hi)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def px(v):
        return left + (tx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n')
    for k in range(5):
        v = y0 + (y1 - y0) * k / 4
        body.append(f'<text x="{left - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.4g}</text>\n')
    for v in sorted(set(xs)):
        body.append(f'<text x="{px(v):.1f}" y="{top + ph + 14}" text-anchor="middle">{v:g}</text>\n')
    body.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>\n')
    body.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
                f'text-anchor="middle">{escape(ylabel)}</text>\n')
    for k, (label, (x, y, se)) in enumerate(series.items()):
        col = _PALETTE[k % len(_PALETTE)]
        x, y, se = (np.asarray(a, float) for a in (x, y, se))
        keep = np.isfinite(y) & ((x > 0) if log_x else True)
        x, y, se = x[keep], y[keep], np.nan_to_num(se[keep])
        if x.size == 0:
            continue
        upper = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y + 2 * se))
        lower = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[::-1], (y - 2 * se)[::-1]))
        body.append(f'<polygon points="{upper} {lower}" fill="{col}" fill-opacity="0.2" stroke="none"/>\n')
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>\n')
        ly = top + 14 + 16 * k
        body.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                    f'stroke="{col}" stroke-width="2"/>\n')
        body.append(f'<text x="{left + pw + 32}" y="{ly}">{escape(label)}</text>\n')
    return _doc(width, height, body, comment)


def write_svg(text: str, path) -> None:
    with open(path, "w") as fh:
        fh.write(text)
