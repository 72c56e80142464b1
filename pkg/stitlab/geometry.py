"""
geometry.py - Convex cells (intervals and convex polygons), hyperplanes in
(alpha, direction) form, halfspace clipping, widths and hit tests
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils import DegenerateCut
from stitlab.tree import ROOT, TreeWord

# Relative volume below which a clipped piece is treated as empty.
EPS_VOL = 1e-12
# Relative tolerance for merging duplicate and collinear polygon vertices.
EPS_VERTEX = 1e-12

Point = Tuple[float, ...]


@dataclass(frozen=True)
class Direction:
    """Unit normal in the upper half-sphere: last nonzero coordinate >= 0."""
    components: Tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.components, dtype=float)
        norm = float(np.linalg.norm(v))
        if v.ndim != 1 or v.size not in (1, 2) or norm == 0.0 or not math.isfinite(norm):
            raise ValueError(f"invalid direction {self.components!r}")
        v = v / norm
        nonzero = np.flatnonzero(v)
        if v[nonzero[-1]] < 0:
            v = -v
        # -0.0 would break equality and serialization
        object.__setattr__(self, "components", tuple(float(c) + 0.0 for c in v))

    @classmethod
    def from_angle(cls, phi: float) -> 'Direction':
        """Planar direction (cos phi, sin phi); phi is reduced into [0, pi)."""
        phi = math.fmod(phi, math.pi)
        if phi < 0:
            phi += math.pi
        if phi >= math.pi:
            phi = 0.0
        return cls((math.cos(phi), math.sin(phi)))

    @classmethod
    def unit(cls) -> 'Direction':
        """The only direction of the line."""
        return cls((1.0,))

    @property
    def dimension(self) -> int:
        return len(self.components)

    @property
    def phi(self) -> float:
        if self.dimension == 1:
            return 0.0
        angle = math.atan2(self.components[1], self.components[0])
        return 0.0 if angle >= math.pi else angle

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.components, dtype=float)


@dataclass(frozen=True)
class Hyperplane:
    """H(alpha, u) = {x : <x, u> = alpha}; H- is <x,u> <= alpha, H+ is >= alpha."""
    alpha: float
    direction: Direction

    def side(self, point: Sequence[float]) -> float:
        return float(np.dot(point, self.direction.vector)) - self.alpha

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "phi": self.direction.phi}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], dimension: int = 2) -> 'Hyperplane':
        if dimension == 1:
            return cls(float(data["alpha"]), Direction.unit())
        return cls(float(data["alpha"]), Direction.from_angle(float(data["phi"])))


@dataclass(frozen=True)
class Cell:
    """Convex cell with a genealogy label.

    For dimension 1 `vertices` is ((lo,), (hi,)); for dimension 2 it is the
    counterclockwise vertex list starting at the lexicographically smallest
    vertex. Use the `interval`, `polygon` and `rectangle` constructors.
    """
    dimension: int
    vertices: Tuple[Point, ...]
    label: TreeWord = ROOT
    _points: np.ndarray = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_points", np.asarray(self.vertices, dtype=float))

    @classmethod
    def interval(cls, lo: float, hi: float, label: TreeWord = ROOT) -> 'Cell':
        lo, hi = float(lo), float(hi)
        if not hi > lo:
            raise DegenerateCut(f"interval [{lo}, {hi}] has no interior")
        return cls(1, ((lo,), (hi,)), label)

    @classmethod
    def polygon(cls, vertices: Sequence[Sequence[float]], label: TreeWord = ROOT) -> 'Cell':
        return cls(2, canonical_polygon(vertices), label)

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float, label: TreeWord = ROOT) -> 'Cell':
        return cls.polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], label)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def lo(self) -> float:
        return self.vertices[0][0]

    @property
    def hi(self) -> float:
        return self.vertices[1][0]

    def relabel(self, label: TreeWord) -> 'Cell':
        return Cell(self.dimension, self.vertices, label)

    def to_dict(self) -> Dict[str, Any]:
        if self.dimension == 1:
            return {"label": str(self.label), "lo": self.lo, "hi": self.hi}
        return {"label": str(self.label), "vertices": [list(v) for v in self.vertices]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Cell':
        label = TreeWord.parse(data.get("label", ""))
        if "vertices" in data:
            return cls.polygon(data["vertices"], label)
        if "rectangle" in data:
            return cls.rectangle(*data["rectangle"], label=label)
        return cls.interval(data["lo"], data["hi"], label)


@dataclass(frozen=True)
class Facet:
    """Intersection of a cell with a cutting hyperplane: a point (1D) or a chord (2D)."""
    dimension: int
    vertices: Tuple[Point, ...]

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def length(self) -> float:
        if self.dimension == 1:
            return 0.0
        a, b = self.points
        return float(np.linalg.norm(b - a))


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def canonical_polygon(vertices: Sequence[Sequence[float]]) -> Tuple[Point, ...]:
    """Counterclockwise, duplicate- and collinear-free, starting at the smallest vertex.

    Raises DegenerateCut when fewer than three vertices survive or the area vanishes.
    """
    pts = [np.asarray(v, dtype=float) for v in vertices]
    if not pts:
        raise DegenerateCut("empty polygon")
    scale = max(float(np.max(np.abs(np.asarray(pts)))), 1.0)
    tol = EPS_VERTEX * scale

    if _signed_area(pts) < 0:
        pts.reverse()

    deduped: List[np.ndarray] = []
    for p in pts:
        if not deduped or np.max(np.abs(p - deduped[-1])) > tol:
            deduped.append(p)
    while len(deduped) > 1 and np.max(np.abs(deduped[0] - deduped[-1])) <= tol:
        deduped.pop()

    # Drop collinear vertices until a full pass removes nothing.
    changed = True
    while changed and len(deduped) >= 3:
        changed = False
        for i in range(len(deduped)):
            prev, cur, nxt = deduped[i - 1], deduped[i], deduped[(i + 1) % len(deduped)]
            if abs(_cross(prev, cur, nxt)) <= tol * scale:
                del deduped[i]
                changed = True
                break

    if len(deduped) < 3 or _signed_area(deduped) <= 0:
        raise DegenerateCut("polygon has no interior")

    start = min(range(len(deduped)), key=lambda i: (deduped[i][0], deduped[i][1]))
    ordered = deduped[start:] + deduped[:start]
    return tuple((float(p[0]) + 0.0, float(p[1]) + 0.0) for p in ordered)


def _signed_area(pts: Sequence[np.ndarray]) -> float:
    total = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i][0], pts[i][1]
        x1, y1 = pts[(i + 1) % n][0], pts[(i + 1) % n][1]
        total += x0 * y1 - x1 * y0
    return total / 2.0


def volume(cell: Cell) -> float:
    """Length of an interval, shoelace area of a polygon."""
    if cell.dimension == 1:
        return cell.hi - cell.lo
    x = cell.points[:, 0]
    y = cell.points[:, 1]
    return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def perimeter(cell: Cell) -> float:
    if cell.dimension == 1:
        return 0.0
    pts = cell.points
    return float(np.sum(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)))


def centroid(cell: Cell) -> np.ndarray:
    if cell.dimension == 1:
        return np.array([(cell.lo + cell.hi) / 2.0])
    pts = cell.points
    nxt = np.roll(pts, -1, axis=0)
    cross = pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]
    area = cross.sum() / 2.0
    cx = np.sum((pts[:, 0] + nxt[:, 0]) * cross) / (6.0 * area)
    cy = np.sum((pts[:, 1] + nxt[:, 1]) * cross) / (6.0 * area)
    return np.array([cx, cy])


def projection_interval(cell, u: Direction) -> Tuple[float, float]:
    """Orthogonal projection of a cell (or facet) onto span(u), as signed distances."""
    proj = cell.points @ u.vector
    return float(proj.min()), float(proj.max())


def width(cell, u: Direction) -> float:
    lo, hi = projection_interval(cell, u)
    return hi - lo


def hits(cell: Cell, h: Hyperplane) -> bool:
    """Closed hit test: the hyperplane meets the cell, boundary included."""
    lo, hi = projection_interval(cell, h.direction)
    return lo <= h.alpha <= hi


def hits_interior(cell: Cell, h: Hyperplane) -> bool:
    lo, hi = projection_interval(cell, h.direction)
    return lo < h.alpha < hi


def contains_point(cell: Cell, point: Sequence[float], tol: float = 1e-9) -> bool:
    p = np.asarray(point, dtype=float)
    if cell.dimension == 1:
        return cell.lo - tol <= p[0] <= cell.hi + tol
    pts = cell.points
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        edge = b - a
        # Outward distance for a counterclockwise polygon.
        if _cross(a, b, p) < -tol * float(np.linalg.norm(edge)):
            return False
    return True


def clip(cell: Cell, h: Hyperplane, reference_volume: Optional[float] = None) -> Tuple[Cell, Cell]:
    """Split a cell by a hyperplane into its H- and H+ parts.

    The pieces are labelled with the cell's label extended by '-' and '+'.
    Raises DegenerateCut when a piece has volume below EPS_VOL times
    `reference_volume` (the window volume; defaults to the cell's own).
    """
    threshold = EPS_VOL * (reference_volume if reference_volume is not None else volume(cell))
    if cell.dimension == 1:
        a = h.alpha
        if not (a - cell.lo > threshold and cell.hi - a > threshold):
            raise DegenerateCut(f"point {a} does not cut [{cell.lo}, {cell.hi}]")
        return (Cell.interval(cell.lo, a, cell.label.minus),
                Cell.interval(a, cell.hi, cell.label.plus))

    pts = cell.points
    d = pts @ h.direction.vector - h.alpha
    minus: List[np.ndarray] = []
    plus: List[np.ndarray] = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        dp, dq = d[i], d[(i + 1) % n]
        if dp <= 0:
            minus.append(p)
        if dp >= 0:
            plus.append(p)
        if (dp < 0 < dq) or (dq < 0 < dp):
            s = dp / (dp - dq)
            x = p + s * (q - p)
            minus.append(x)
            plus.append(x)

    try:
        cell_minus = Cell.polygon(minus, cell.label.minus)
        cell_plus = Cell.polygon(plus, cell.label.plus)
    except DegenerateCut as e:
        raise DegenerateCut(f"cut {h} grazes cell {cell.label!s}: {e}") from e
    if volume(cell_minus) < threshold or volume(cell_plus) < threshold:
        raise DegenerateCut(f"cut {h} leaves a piece below the volume threshold")
    return cell_minus, cell_plus


def facet_of_cut(cell: Cell, h: Hyperplane) -> Facet:
    """The (dimension-1) intersection of the cell with the cutting hyperplane."""
    if cell.dimension == 1:
        if not hits_interior(cell, h):
            raise DegenerateCut(f"point {h.alpha} does not cut [{cell.lo}, {cell.hi}]")
        return Facet(1, ((h.alpha,),))

    pts = cell.points
    u = h.direction.vector
    d = pts @ u - h.alpha
    crossings: List[np.ndarray] = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        dp, dq = d[i], d[(i + 1) % n]
        if dp == 0:
            crossings.append(p)
        if (dp < 0 < dq) or (dq < 0 < dp):
            crossings.append(p + dp / (dp - dq) * (q - p))
    if len(crossings) < 2:
        raise DegenerateCut(f"hyperplane {h} does not cross cell {cell.label!s}")
    tangent = np.array([-u[1], u[0]])
    along = [float(np.dot(c, tangent)) for c in crossings]
    a = crossings[int(np.argmin(along))]
    b = crossings[int(np.argmax(along))]
    if max(along) - min(along) <= EPS_VERTEX * max(width(cell, h.direction), 1.0):
        raise DegenerateCut(f"hyperplane {h} only touches cell {cell.label!s}")
    return Facet(2, ((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))))
