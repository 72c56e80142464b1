"""
svg_render.py - Deterministic SVG export of planar tessellations, one closed
path per cell
"""

from typing import List, Sequence

from stitlab.tess import Tessellation

CANVAS = 512.0
MARGIN = 8.0


def _fmt(x: float) -> str:
    # Fixed precision keeps repeated renders byte-identical.
    text = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def get_svg_path(points: Sequence[Sequence[float]]) -> str:
    path = f"M{_fmt(points[0][0])},{_fmt(points[0][1])}"
    for x, y in points[1:]:
        path += f"L{_fmt(x)},{_fmt(y)}"
    return path + "Z"


def render_svg(tess: Tessellation, canvas: float = CANVAS, stroke: str = "#000000",
               fill: str = "#ffffff") -> str:
    """SVG document of a 2D tessellation, cells in word order.

    The window's bounding box is scaled to the canvas with the y axis
    pointing up.
    """
    if tess.dimension != 2:
        raise ValueError(f"only planar tessellations can be rendered, got dimension {tess.dimension}")
    pts = tess.window.points
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    scale = (canvas - 2 * MARGIN) / max(x1 - x0, y1 - y0)
    width = (x1 - x0) * scale + 2 * MARGIN
    height = (y1 - y0) * scale + 2 * MARGIN

    def to_canvas(p) -> List[float]:
        return [MARGIN + (p[0] - x0) * scale, height - MARGIN - (p[1] - y0) * scale]

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<g fill="{fill}" stroke="{stroke}" stroke-width="1" stroke-linejoin="round">',
    ]
    for label, cell in tess.ordered_cells():
        d = get_svg_path([to_canvas(v) for v in cell.vertices])
        lines.append(f'<path data-label="{str(label) or "o"}" d="{d}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path: str, tess: Tessellation) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_svg(tess))
