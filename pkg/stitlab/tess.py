"""
tess.py - Tessellation state of a window: labelled cells, division by
hyperplanes, restriction to subwindows, the multiplicity function xi and
the jump history
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from utils import DegenerateCut, NoHit, NonmonotoneTime, NotContained, UnknownLabel
from stitlab.geometry import (
    Cell,
    Hyperplane,
    centroid,
    clip,
    contains_point,
    hits,
    perimeter,
    volume,
)
from stitlab.measure import HyperplaneMeasure, hit_mass, zeta
from stitlab.tree import ROOT, TreeTuple, TreeWord, extend, leaves

logger = logging.getLogger("Tessellation")

# Full recomputation of the incremental zeta every this many jumps.
ZETA_RESYNC_EVERY = 1000
ZETA_DRIFT_TOL = 1e-8


@dataclass
class JumpRecord:
    """A single division in the history of a tessellation"""
    time: float
    divided_label: TreeWord
    hyperplane: Hyperplane
    proposals: int = 1
    zeta_before: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert the record to a dictionary"""
        return {
            "t": self.time,
            "label": str(self.divided_label),
            "alpha": self.hyperplane.alpha,
            "phi": self.hyperplane.direction.phi,
            "proposals": self.proposals,
            "zeta": self.zeta_before,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], dimension: int = 2) -> 'JumpRecord':
        """Create a record from a dictionary"""
        return cls(
            time=float(data["t"]),
            divided_label=TreeWord.parse(data.get("label", "")),
            hyperplane=Hyperplane.from_dict(data, dimension),
            proposals=int(data.get("proposals", 1)),
            zeta_before=data.get("zeta"),
        )


@dataclass
class Tessellation:
    """Cells of a window keyed by genealogy word, with their division history.

    When a measure is attached, zeta is maintained incrementally.
    """
    window: Cell
    measure: Optional[HyperplaneMeasure] = None
    cells: Dict[TreeWord, Cell] = None
    history: List[JumpRecord] = None
    zeta_cache: Optional[float] = None

    def __post_init__(self):
        """Initialize cells and history if not provided"""
        if self.cells is None:
            self.cells = {ROOT: self.window.relabel(ROOT)}
        if self.history is None:
            self.history = []
        if self.zeta_cache is None and self.measure is not None:
            self.zeta_cache = zeta(self.measure, self)

    @property
    def dimension(self) -> int:
        return self.window.dimension

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def last_time(self) -> float:
        return self.history[-1].time if self.history else 0.0

    @property
    def zeta(self) -> float:
        if self.zeta_cache is None:
            raise ValueError("no measure attached to this tessellation")
        return self.zeta_cache

    def labels(self) -> List[TreeWord]:
        """Cell labels in word order."""
        return sorted(self.cells)

    def ordered_cells(self) -> List[Tuple[TreeWord, Cell]]:
        return [(w, self.cells[w]) for w in self.labels()]

    def copy(self) -> 'Tessellation':
        return Tessellation(
            window=self.window,
            measure=self.measure,
            cells=dict(self.cells),
            history=list(self.history),
            zeta_cache=self.zeta_cache,
        )

    def divide(self, label: TreeWord, h: Hyperplane, time: float, proposals: int = 1) -> 'Tessellation':
        """Replace the cell `label` by its two pieces on either side of `h`.

        Mutates and returns the tessellation.
        """
        cell = self.cells.get(label)
        if cell is None:
            raise UnknownLabel(f"no cell labelled {str(label) or 'o'}")
        if not hits(cell, h):
            raise NoHit(f"hyperplane {h} misses cell {str(label) or 'o'}")
        if self.history and not time > self.last_time:
            raise NonmonotoneTime(f"jump time {time} does not exceed {self.last_time}")
        if not self.history and time < 0:
            raise NonmonotoneTime(f"jump time {time} is negative")

        minus, plus = clip(cell, h, reference_volume=volume(self.window))
        zeta_before = self.zeta_cache
        del self.cells[label]
        self.cells[minus.label] = minus
        self.cells[plus.label] = plus
        self.history.append(JumpRecord(time, label, h, proposals, zeta_before))

        if self.measure is not None:
            m = self.measure
            self.zeta_cache += hit_mass(m, minus) + hit_mass(m, plus) - hit_mass(m, cell)
            m.forget(cell)
            if len(self.history) % ZETA_RESYNC_EVERY == 0:
                self._resync_zeta()
        return self

    def _resync_zeta(self) -> None:
        exact = zeta(self.measure, self)
        drift = abs(exact - self.zeta_cache) / exact
        if drift > ZETA_DRIFT_TOL:
            logger.warning(f"Incremental zeta drifted by {drift:.3e} relative after "
                           f"{len(self.history)} jumps; resynchronised")
        self.zeta_cache = exact

    def genealogy(self) -> TreeTuple:
        """Genealogy tuple rebuilt by replaying the history."""
        r = TreeTuple()
        for record in self.history:
            r = extend(r, record.divided_label)
        return r

    def validate(self, tol: float = 1e-9) -> None:
        """Check the partition, label and history invariants."""
        total = math.fsum(volume(c) for c in self.cells.values())
        window_volume = volume(self.window)
        if abs(total - window_volume) > tol * window_volume:
            raise AssertionError(f"cell volumes sum to {total}, window volume is {window_volume}")
        if self.n_cells != len(self.history) + 1:
            raise AssertionError(f"{self.n_cells} cells after {len(self.history)} jumps")
        times = [r.time for r in self.history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise AssertionError("jump times are not strictly increasing")
        if self.labels() != leaves(self.genealogy()):
            raise AssertionError("cell labels differ from the leaves of the replayed genealogy")
        for word, cell in self.cells.items():
            if cell.label != word:
                raise AssertionError(f"cell stored under {word!s} carries label {cell.label!s}")

    def total_boundary_length(self) -> float:
        """Internal boundary length (2D) or number of division points (1D)."""
        if self.dimension == 1:
            return float(self.n_cells - 1)
        inner = math.fsum(perimeter(c) for c in self.cells.values()) - perimeter(self.window)
        return max(inner / 2.0, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        """Convert the tessellation to a dictionary for serialization"""
        return {
            "window": self.window.to_dict(),
            "cells": [c.to_dict() for _, c in self.ordered_cells()],
            "history": [r.to_dict() for r in self.history],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], measure: Optional[HyperplaneMeasure] = None) -> 'Tessellation':
        """Rebuild a tessellation by replaying the stored history on the window"""
        window = Cell.from_dict(data["window"])
        tess = initial(window, measure)
        for entry in data.get("history", []):
            record = JumpRecord.from_dict(entry, window.dimension)
            tess.divide(record.divided_label, record.hyperplane, record.time, record.proposals)
        return tess


def initial(window: Cell, measure: Optional[HyperplaneMeasure] = None) -> Tessellation:
    """The one-cell tessellation {W} with an empty history."""
    return Tessellation(window=window.relabel(ROOT), measure=measure)


def divide(t: Tessellation, label: TreeWord, h: Hyperplane, time: float) -> Tessellation:
    return t.divide(label, h, time)


def xi(t: Tessellation, h: Hyperplane) -> int:
    """Number of cells hit by `h` (closed hit test)."""
    if not hits(t.window, h):
        raise NoHit(f"hyperplane {h} misses the window")
    return sum(1 for c in t.cells.values() if hits(c, h))


def hit_cells(t: Tessellation, h: Hyperplane) -> List[TreeWord]:
    """Labels of the cells hit by `h`, in word order."""
    return [w for w, c in t.ordered_cells() if hits(c, h)]


def gamma_density_total(t: Tessellation, m: HyperplaneMeasure) -> float:
    """Total mass of Gamma_n = sum of the hit distributions of all cells; equals zeta."""
    return zeta(m, t)


def restrict(t: Tessellation, subwindow: Cell) -> Tessellation:
    """The tessellation induced on `subwindow`.

    The history is replayed on the subwindow; jumps whose hyperplane does
    not cut the current host cell are dropped and labels are derived fresh.
    """
    for vertex in subwindow.vertices:
        if not contains_point(t.window, vertex):
            raise NotContained(f"subwindow vertex {vertex} lies outside the window")

    restricted = initial(subwindow, t.measure)
    # Original label -> label of the restricted cell it covers, or None if disjoint.
    host: Dict[TreeWord, Optional[TreeWord]] = {ROOT: ROOT}
    for record in t.history:
        target = host.pop(record.divided_label, None)
        lost_minus, lost_plus = record.divided_label.minus, record.divided_label.plus
        if target is None:
            host[lost_minus] = None
            host[lost_plus] = None
            continue
        cell = restricted.cells[target]
        h = record.hyperplane
        try:
            restricted.divide(target, h, record.time)
        except (DegenerateCut, NoHit):
            # The cut misses the interior: the whole host lies on one side.
            if h.side(centroid(cell)) < 0:
                host[lost_minus], host[lost_plus] = target, None
            else:
                host[lost_minus], host[lost_plus] = None, target
            continue
        host[lost_minus] = target.minus
        host[lost_plus] = target.plus
    return restricted
