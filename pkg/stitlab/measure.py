"""
measure.py - Translation-invariant hyperplane measures gamma * lambda x theta:
hit masses of cells, the total mass zeta of a tessellation, and samplers
for the normalized hit distributions
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate

from utils import ConfigError, RejectionOverflow
from stitlab.geometry import (
    Cell,
    Direction,
    Hyperplane,
    hits,
    projection_interval,
    width,
)

logger = logging.getLogger("Measure")

DISCRETE = "discrete"
ISOTROPIC = "isotropic"

# Number of equal angle bins of the isotropic inverse-CDF tables.
GRID_BINS = 4096
GRID = np.linspace(0.0, math.pi, GRID_BINS + 1)
_GRID_DIRECTIONS = np.vstack([np.cos(GRID), np.sin(GRID)])

QUAD_EPSREL = 1e-10
MAX_PROPOSALS = 10 ** 9


@dataclass(frozen=True)
class DirectionalDistribution:
    """Probability law theta of hyperplane normals on the upper half-sphere.

    `atoms` holds (direction, weight) pairs for a discrete law and is empty
    for the isotropic law.
    """
    kind: str
    atoms: Tuple[Tuple[Direction, float], ...] = ()

    @classmethod
    def isotropic(cls) -> 'DirectionalDistribution':
        return cls(ISOTROPIC)

    @classmethod
    def discrete(cls, atoms: List[Tuple[Direction, float]]) -> 'DirectionalDistribution':
        merged: Dict[Direction, float] = {}
        for direction, weight in atoms:
            if not weight > 0:
                raise ConfigError("theta", f"atom weight {weight} must be positive")
            merged[direction] = merged.get(direction, 0.0) + float(weight)
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-6:
            raise ConfigError("theta", f"atom weights sum to {total}, expected 1")
        ordered = sorted(merged.items(), key=lambda item: item[0].components)
        return cls(DISCRETE, tuple((d, w / total) for d, w in ordered))

    @classmethod
    def axis_parallel(cls) -> 'DirectionalDistribution':
        return cls.discrete([(Direction.from_angle(0.0), 0.5),
                             (Direction.from_angle(math.pi / 2), 0.5)])

    @property
    def is_isotropic(self) -> bool:
        return self.kind == ISOTROPIC

    @property
    def directions(self) -> List[Direction]:
        return [d for d, _ in self.atoms]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    def validate(self, dimension: int) -> None:
        """Reject laws whose hyperplanes are all parallel to one line."""
        if self.is_isotropic:
            return
        if not self.atoms:
            raise ConfigError("theta", "discrete law needs at least one atom")
        if any(d.dimension != dimension for d in self.directions):
            raise ConfigError("theta", f"atom directions must have dimension {dimension}")
        if dimension == 2 and len(self.atoms) < 2:
            raise ConfigError("theta", "needs at least two distinct directions so that no line "
                                       "is parallel to every hyperplane")

    def to_dict(self) -> Dict[str, Any]:
        if self.is_isotropic:
            return {"kind": ISOTROPIC}
        return {"kind": DISCRETE,
                "atoms": [{"phi": d.phi, "w": w} for d, w in self.atoms]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], dimension: int = 2) -> 'DirectionalDistribution':
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("theta", "expected an object with a 'kind' entry")
        kind = data["kind"]
        if kind == ISOTROPIC:
            law = cls.isotropic()
        elif kind == DISCRETE:
            atoms = data.get("atoms")
            if not atoms:
                raise ConfigError("theta", "discrete law needs a non-empty 'atoms' list")
            try:
                parsed = [(Direction.unit() if dimension == 1 else Direction.from_angle(float(a["phi"])),
                           float(a["w"])) for a in atoms]
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError("theta", f"malformed atom: {e}") from e
            law = cls.discrete(parsed)
        else:
            raise ConfigError("theta", f"unknown kind {kind!r}")
        law.validate(dimension)
        return law


@dataclass(frozen=True, eq=False)
class WidthTable:
    """Widths of one cell in every direction the sampler can draw.

    Discrete law: one width per atom. Isotropic law: widths on the GRID angles.
    """
    widths: np.ndarray


@dataclass
class HyperplaneMeasure:
    """gamma * (Lebesgue on alpha) x theta, restricted to hit-sets of bounded cells."""
    gamma: float
    theta: DirectionalDistribution
    dimension: int = 2
    _mass_cache: Dict[Cell, float] = field(default_factory=dict, init=False, repr=False, compare=False)
    _table_cache: Dict[Cell, WidthTable] = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("gamma", f"intensity must be a positive finite number, got {self.gamma!r}")
        if self.dimension not in (1, 2):
            raise ConfigError("dimension", f"only dimensions 1 and 2 are supported, got {self.dimension}")
        self.gamma = float(self.gamma)
        self.theta.validate(self.dimension)

    def __getstate__(self):
        return {"gamma": self.gamma, "theta": self.theta, "dimension": self.dimension}

    def __setstate__(self, state):
        self.gamma = state["gamma"]
        self.theta = state["theta"]
        self.dimension = state["dimension"]
        self._mass_cache = {}
        self._table_cache = {}
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, data: Dict[str, Any], dimension: int = 2) -> 'HyperplaneMeasure':
        if not isinstance(data, dict):
            raise ConfigError("measure", "expected an object")
        if "gamma" not in data:
            raise ConfigError("gamma", "missing")
        gamma = data["gamma"]
        if isinstance(gamma, bool) or not isinstance(gamma, (int, float)):
            raise ConfigError("gamma", f"must be a number, got {gamma!r}")
        theta = DirectionalDistribution.from_dict(data.get("theta", {"kind": ISOTROPIC}), dimension)
        return cls(float(gamma), theta, dimension)

    def to_dict(self) -> Dict[str, Any]:
        return {"gamma": self.gamma, "theta": self.theta.to_dict()}

    @property
    def directions(self) -> List[Direction]:
        """Directions the discrete sampler draws from (the single unit direction in 1D)."""
        if self.dimension == 1:
            return [Direction.unit()]
        return self.theta.directions

    @property
    def direction_weights(self) -> np.ndarray:
        if self.dimension == 1:
            return np.ones(1)
        return self.theta.weights

    @property
    def uses_grid(self) -> bool:
        return self.dimension == 2 and self.theta.is_isotropic

    def forget(self, cell: Cell) -> None:
        """Evict a cell that has been divided."""
        with self._lock:
            self._mass_cache.pop(cell, None)
            self._table_cache.pop(cell, None)

    def clear_cache(self) -> None:
        with self._lock:
            self._mass_cache.clear()
            self._table_cache.clear()


def _mean_width_isotropic(shape) -> float:
    """(1/pi) * integral of the width over phi in [0, pi), by adaptive quadrature."""
    pts = shape.points

    def w(phi: float) -> float:
        proj = pts @ np.array([math.cos(phi), math.sin(phi)])
        return float(proj.max() - proj.min())

    # The width is a sum of sinusoids between consecutive edge-normal angles.
    edges = np.roll(pts, -1, axis=0) - pts
    breaks = sorted({float(np.mod(math.atan2(e[0], -e[1]), math.pi)) for e in edges if np.any(e)})
    breaks = [b for b in breaks if 0.0 < b < math.pi]
    value, _ = integrate.quad(w, 0.0, math.pi, points=breaks or None,
                              epsrel=QUAD_EPSREL, epsabs=0.0, limit=400)
    return value / math.pi


def hit_mass(m: HyperplaneMeasure, cell) -> float:
    """Lambda([C]) = gamma * integral of width(C, u) theta(du).

    Accepts cells and cut facets; cell values are cached until `forget`.
    """
    cacheable = isinstance(cell, Cell)
    if cacheable:
        with m._lock:
            cached = m._mass_cache.get(cell)
        if cached is not None:
            return cached

    if m.dimension == 1:
        value = m.gamma * width(cell, Direction.unit())
    elif m.theta.is_isotropic:
        value = m.gamma * _mean_width_isotropic(cell)
    else:
        value = m.gamma * sum(w * width(cell, d) for d, w in m.theta.atoms)

    if cacheable:
        with m._lock:
            return m._mass_cache.setdefault(cell, value)
    return value


def zeta(m: HyperplaneMeasure, tess) -> float:
    """Total hit mass of all cells of a tessellation."""
    return math.fsum(hit_mass(m, c) for c in tess.cells.values())


def width_table(m: HyperplaneMeasure, cell: Cell) -> WidthTable:
    with m._lock:
        cached = m._table_cache.get(cell)
    if cached is not None:
        return cached
    if m.uses_grid:
        proj = cell.points @ _GRID_DIRECTIONS
        widths = proj.max(axis=0) - proj.min(axis=0)
    else:
        widths = np.array([width(cell, d) for d in m.directions])
    table = WidthTable(widths)
    with m._lock:
        return m._table_cache.setdefault(cell, table)


def grid_cdf(widths: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral of grid widths; starts at 0."""
    return integrate.cumulative_trapezoid(widths, GRID, initial=0.0)


def sample_direction(m: HyperplaneMeasure, widths: np.ndarray, rng: np.random.Generator,
                     cdf: Optional[np.ndarray] = None) -> Direction:
    """Draw u with density proportional to `widths` with respect to theta."""
    if m.uses_grid:
        if cdf is None:
            cdf = grid_cdf(widths)
        target = rng.random() * cdf[-1]
        return Direction.from_angle(float(np.interp(target, cdf, GRID)))
    weights = m.direction_weights * widths
    cumulative = np.cumsum(weights)
    idx = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return m.directions[min(idx, len(cumulative) - 1)]


def sample_hitting(m: HyperplaneMeasure, cell: Cell, rng: np.random.Generator) -> Hyperplane:
    """Draw from the normalized hit distribution of one cell: direction by
    width-weighted theta, then alpha uniform on the projection interval."""
    table = width_table(m, cell)
    u = sample_direction(m, table.widths, rng)
    lo, hi = projection_interval(cell, u)
    return Hyperplane(lo + rng.random() * (hi - lo), u)


def sample_window(m: HyperplaneMeasure, window: Cell, rng: np.random.Generator) -> Hyperplane:
    return sample_hitting(m, window, rng)


def sample_hitting_by_rejection(m: HyperplaneMeasure, window: Cell, cell: Cell,
                                rng: np.random.Generator,
                                max_proposals: int = MAX_PROPOSALS) -> Tuple[Hyperplane, int]:
    """Draw window-hitting hyperplanes until one hits `cell`.

    Returns the accepted hyperplane and the number of proposals used.
    """
    proposals = 0
    while proposals < max_proposals:
        proposals += 1
        h = sample_window(m, window, rng)
        if hits(cell, h):
            return h, proposals
    raise RejectionOverflow(f"no hyperplane hit cell {cell.label!s} after {max_proposals} proposals")
