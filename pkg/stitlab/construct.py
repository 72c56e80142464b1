"""
construct.py - The three STIT simulators in a bounded window:

- LifetimeConstruction: every live cell carries an exponential lifetime;
  the dividing hyperplane is found by rejection against the window
- JumpChainConstruction: exponential holding times with rate zeta, the cell
  is selected with probability proportional to its hit mass, the hyperplane
  is the next hit of one shared stream of window hyperplanes
- DensityConstruction: the hyperplane is drawn from the sum of all cell hit
  distributions and one of the cells it hits is chosen with equal probability;
  every drawn hyperplane is used

All three produce the same law of trajectories.
"""

import hashlib
import heapq
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from utils import ConfigError, DegenerateCut, OutOfRange, with_resample
from stitlab.geometry import Cell, Hyperplane, projection_interval
from stitlab.measure import (
    HyperplaneMeasure,
    grid_cdf,
    hit_mass,
    sample_direction,
    sample_hitting_by_rejection,
    width_table,
)
from stitlab.tess import JumpRecord, Tessellation, hit_cells, initial
from stitlab.tree import TreeWord

logger = logging.getLogger("Construct")

# Degenerate cuts have probability zero; this only guards against a broken state.
MAX_RESAMPLES = 100
# Full rebuild of the density aggregate every this many incremental updates.
AGGREGATE_REBUILD_EVERY = 1000


class ConstructionTag(Enum):
    LIFETIME = "lifetime"
    JUMPCHAIN = "jumpchain"
    DENSITY = "density"


@dataclass
class SimConfig:
    """A simulation request: window, measure, horizon, seed and construction."""
    window: Cell
    measure: HyperplaneMeasure
    t_end: float
    seed: int = 0
    construction: ConstructionTag = ConstructionTag.DENSITY
    replications: int = 1
    max_jumps: Optional[int] = None

    def __post_init__(self):
        if self.window.dimension != self.measure.dimension:
            raise ConfigError("window", f"window dimension {self.window.dimension} does not match "
                                        f"measure dimension {self.measure.dimension}")
        if self.max_jumps is not None and (isinstance(self.max_jumps, bool) or not isinstance(self.max_jumps, int)
                                           or self.max_jumps < 0):
            raise ConfigError("max_jumps", f"must be a non-negative integer, got {self.max_jumps!r}")
        if not (isinstance(self.t_end, (int, float)) and self.t_end > 0):
            raise ConfigError("t_end", f"must be positive, got {self.t_end!r}")
        if math.isinf(self.t_end) and self.max_jumps is None:
            raise ConfigError("t_end", "an unbounded horizon needs max_jumps")
        if isinstance(self.replications, bool) or not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications", f"must be an integer >= 1, got {self.replications!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SimConfig':
        if not isinstance(data, dict):
            raise ConfigError("config", "expected a JSON object")
        if "window" not in data:
            raise ConfigError("window", "missing")
        try:
            window = Cell.from_dict(data["window"])
        except ConfigError:
            raise
        except Exception as e:
            raise ConfigError("window", f"invalid window: {e}") from e
        measure = HyperplaneMeasure.from_dict(data.get("measure", {}), window.dimension)

        t_end = data.get("t_end")
        if t_end is None:
            t_end = math.inf
        if isinstance(t_end, bool) or not isinstance(t_end, (int, float)):
            raise ConfigError("t_end", f"must be a number, got {t_end!r}")

        tag = data.get("construction", ConstructionTag.DENSITY.value)
        try:
            construction = ConstructionTag(tag)
        except ValueError:
            raise ConfigError("construction", f"unknown construction {tag!r}; expected one of "
                                              f"{[t.value for t in ConstructionTag]}") from None

        return cls(
            window=window,
            measure=measure,
            t_end=float(t_end),
            seed=data.get("seed", 0),
            construction=construction,
            replications=data.get("replications", 1),
            max_jumps=data.get("max_jumps"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window": {k: v for k, v in self.window.to_dict().items() if k != "label"},
            "measure": self.measure.to_dict(),
            "t_end": None if math.isinf(self.t_end) else self.t_end,
            "seed": self.seed,
            "construction": self.construction.value,
            "replications": self.replications,
            "max_jumps": self.max_jumps,
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; independent of key order."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RandomStreams:
    """Independent streams: U selects cells, V drives times, G draws hyperplanes."""
    u: np.random.Generator
    v: np.random.Generator
    g: np.random.Generator

    @classmethod
    def for_replication(cls, seed: int, replication: int = 0) -> 'RandomStreams':
        u, v, g = np.random.SeedSequence([seed, replication]).spawn(3)
        return cls(np.random.default_rng(u), np.random.default_rng(v), np.random.default_rng(g))


@dataclass
class Trajectory:
    """A simulated path; the history of `final` carries every jump."""
    final: Tessellation
    t_end: float
    construction: ConstructionTag
    seed: int
    replication: int = 0

    @property
    def history(self) -> List[JumpRecord]:
        return self.final.history

    @property
    def n_jumps(self) -> int:
        return len(self.final.history)

    @property
    def n_cells(self) -> int:
        return self.final.n_cells

    @property
    def proposal_count(self) -> int:
        return sum(r.proposals for r in self.final.history)

    @property
    def jump_times(self) -> List[float]:
        return [r.time for r in self.final.history]

    def header(self) -> Dict[str, Any]:
        return {
            "kind": "header",
            "window": {k: v for k, v in self.final.window.to_dict().items() if k != "label"},
            "t_end": None if math.isinf(self.t_end) else self.t_end,
            "construction": self.construction.value,
            "seed": self.seed,
            "replication": self.replication,
        }

    @classmethod
    def from_records(cls, header: Dict[str, Any], jumps: List[Dict[str, Any]],
                     measure: Optional[HyperplaneMeasure] = None) -> 'Trajectory':
        final = Tessellation.from_dict({"window": header["window"], "history": jumps}, measure)
        t_end = header.get("t_end")
        return cls(
            final=final,
            t_end=math.inf if t_end is None else float(t_end),
            construction=ConstructionTag(header["construction"]),
            seed=int(header.get("seed", 0)),
            replication=int(header.get("replication", 0)),
        )


class DensityAggregate:
    """Sum over all cells of their width tables, kept in step with divisions.

    For a discrete law the entries are per-atom widths; for the isotropic law
    they are widths on the angle grid and the cumulative table is rebuilt
    lazily when dirty.
    """

    def __init__(self, m: HyperplaneMeasure, tess: Tessellation):
        self.m = m
        self.rebuild(tess)

    def rebuild(self, tess: Tessellation) -> None:
        self.total = np.sum([width_table(self.m, c).widths for c in tess.cells.values()], axis=0)
        self._cdf = None
        self._updates = 0
        self._staged = None

    def stage(self, old: Cell) -> None:
        """Hold the widths of a cell about to be divided; its cache entry goes with the division."""
        self._staged = width_table(self.m, old).widths

    def replace(self, tess: Tessellation, new: Tuple[Cell, Cell]) -> None:
        staged, self._staged = self._staged, None
        self._updates += 1
        if staged is None or self._updates >= AGGREGATE_REBUILD_EVERY:
            self.rebuild(tess)
            return
        self.total = (self.total - staged
                      + width_table(self.m, new[0]).widths + width_table(self.m, new[1]).widths)
        self._cdf = None

    def sample_direction(self, rng: np.random.Generator):
        if self.m.uses_grid and self._cdf is None:
            self._cdf = grid_cdf(self.total)
        return sample_direction(self.m, self.total, rng, self._cdf)


def sample_alpha(intervals: np.ndarray, rng: np.random.Generator) -> float:
    """Draw alpha from the normalized step function sum_C 1[lo_C, hi_C](alpha).

    `intervals` is an (n, 2) array of projection intervals.
    """
    lo, hi = intervals[:, 0], intervals[:, 1]
    breaks = np.unique(intervals.ravel())
    left = breaks[:-1]
    # Multiplicity of each elementary segment [breaks[i], breaks[i+1]).
    counts = np.searchsorted(np.sort(lo), left, side="right") - np.searchsorted(np.sort(hi), left, side="right")
    mass = counts * np.diff(breaks)
    cumulative = np.cumsum(mass)
    target = rng.random() * cumulative[-1]
    i = min(int(np.searchsorted(cumulative, target, side="right")), len(mass) - 1)
    start = cumulative[i] - mass[i]
    return float(left[i] + (target - start) / counts[i])


class BaseConstruction:
    """Common holding-time loop; subclasses decide how a jump is selected."""

    tag: ConstructionTag = None

    def __init__(self):
        self.logger = logging.getLogger(self.__class__.__name__)

    def start(self, tess: Tessellation) -> Any:
        """Per-run sampler state; None unless the construction needs one."""
        return None

    def before_divide(self, state: Any, tess: Tessellation, old: Cell) -> None:
        pass

    def after_divide(self, state: Any, tess: Tessellation, old: Cell) -> None:
        pass

    def select(self, tess: Tessellation, streams: RandomStreams,
               state: Any = None) -> Tuple[TreeWord, Hyperplane, int]:
        """Choose the cell to divide and its hyperplane without dividing.

        Returns (label, hyperplane, proposals consumed).
        """
        raise NotImplementedError

    @with_resample(max_retries=MAX_RESAMPLES)
    def _jump(self, tess: Tessellation, streams: RandomStreams, state: Any, time: float) -> None:
        label, h, proposals = self.select(tess, streams, state)
        old = tess.cells[label]
        self.before_divide(state, tess, old)
        tess.divide(label, h, time, proposals)
        self.after_divide(state, tess, old)

    def run(self, cfg: SimConfig, streams: RandomStreams, replication: int = 0) -> Trajectory:
        tess = initial(cfg.window, cfg.measure)
        state = self.start(tess)
        t = 0.0
        while cfg.max_jumps is None or len(tess.history) < cfg.max_jumps:
            holding = streams.v.exponential(1.0 / tess.zeta)
            if t + holding > cfg.t_end:
                break
            t += holding
            self._jump(tess, streams, state, t)
            self.logger.debug(f"jump {len(tess.history)} at t={t:.6g}, zeta={tess.zeta:.6g}")
        return Trajectory(tess, cfg.t_end, self.tag, cfg.seed, replication)


class LifetimeConstruction(BaseConstruction):
    """Independent exponential lifetimes per live cell, processed in time order."""

    tag = ConstructionTag.LIFETIME

    def select(self, tess: Tessellation, streams: RandomStreams,
               state: Any = None) -> Tuple[TreeWord, Hyperplane, int]:
        m = tess.measure
        # Fresh clocks are exact for a frozen state because lifetimes are memoryless.
        clocks = [(streams.v.exponential(1.0 / hit_mass(m, c)), w) for w, c in tess.ordered_cells()]
        _, label = min(clocks, key=lambda item: (item[0], item[1].sort_key))
        h, proposals = sample_hitting_by_rejection(m, tess.window, tess.cells[label], streams.g)
        return label, h, proposals

    @with_resample(max_retries=MAX_RESAMPLES)
    def _divide_at_death(self, tess: Tessellation, label: TreeWord, time: float,
                         streams: RandomStreams) -> None:
        h, proposals = sample_hitting_by_rejection(tess.measure, tess.window, tess.cells[label], streams.g)
        tess.divide(label, h, time, proposals)

    def _schedule(self, queue: list, tess: Tessellation, label: TreeWord, now: float,
                  streams: RandomStreams) -> None:
        lifetime = streams.v.exponential(1.0 / hit_mass(tess.measure, tess.cells[label]))
        heapq.heappush(queue, (now + lifetime, label.sort_key, label))

    def run(self, cfg: SimConfig, streams: RandomStreams, replication: int = 0) -> Trajectory:
        tess = initial(cfg.window, cfg.measure)
        queue: list = []
        for label in tess.labels():
            self._schedule(queue, tess, label, 0.0, streams)

        while queue and (cfg.max_jumps is None or len(tess.history) < cfg.max_jumps):
            death, _, label = heapq.heappop(queue)
            if death > cfg.t_end:
                break
            self._divide_at_death(tess, label, death, streams)
            for child in label.successors():
                self._schedule(queue, tess, child, death, streams)
            self.logger.debug(f"cell {label!s} died at t={death:.6g}; {tess.n_cells} cells")
        return Trajectory(tess, cfg.t_end, self.tag, cfg.seed, replication)


class JumpChainConstruction(BaseConstruction):
    """Select the cell by hit mass, then take the next hit of the shared G stream."""

    tag = ConstructionTag.JUMPCHAIN

    def select(self, tess: Tessellation, streams: RandomStreams,
               state: Any = None) -> Tuple[TreeWord, Hyperplane, int]:
        m = tess.measure
        ordered = tess.ordered_cells()
        # Intervals of length mass/zeta partition [0, 1) in word order.
        cumulative = np.cumsum([hit_mass(m, c) for _, c in ordered])
        target = streams.u.random() * cumulative[-1]
        idx = min(int(np.searchsorted(cumulative, target, side="right")), len(ordered) - 1)
        label, cell = ordered[idx]
        h, proposals = sample_hitting_by_rejection(m, tess.window, cell, streams.g)
        return label, h, proposals


class DensityConstruction(BaseConstruction):
    """Draw the hyperplane from the sum of cell hit distributions, then pick
    uniformly among the cells it hits."""

    tag = ConstructionTag.DENSITY

    def start(self, tess: Tessellation) -> DensityAggregate:
        return DensityAggregate(tess.measure, tess)

    def before_divide(self, state: DensityAggregate, tess: Tessellation, old: Cell) -> None:
        state.stage(old)

    def after_divide(self, state: DensityAggregate, tess: Tessellation, old: Cell) -> None:
        label = old.label
        state.replace(tess, (tess.cells[label.minus], tess.cells[label.plus]))

    def sample_hyperplane(self, tess: Tessellation, streams: RandomStreams,
                          state: Optional[DensityAggregate] = None) -> Hyperplane:
        aggregate = state if state is not None else DensityAggregate(tess.measure, tess)
        u = aggregate.sample_direction(streams.g)
        intervals = np.array([projection_interval(c, u) for _, c in tess.ordered_cells()])
        return Hyperplane(sample_alpha(intervals, streams.g), u)

    def select(self, tess: Tessellation, streams: RandomStreams,
               state: Any = None) -> Tuple[TreeWord, Hyperplane, int]:
        h = self.sample_hyperplane(tess, streams, state)
        candidates = hit_cells(tess, h)
        if not candidates:
            raise DegenerateCut(f"sampled hyperplane {h} hits no cell")
        # Equal-length intervals 1/xi in word order.
        idx = min(int(streams.u.random() * len(candidates)), len(candidates) - 1)
        return candidates[idx], h, 1


_CONSTRUCTIONS = {
    ConstructionTag.LIFETIME: LifetimeConstruction,
    ConstructionTag.JUMPCHAIN: JumpChainConstruction,
    ConstructionTag.DENSITY: DensityConstruction,
}


def create_construction(tag: ConstructionTag) -> BaseConstruction:
    """Creates the simulator for a construction tag."""
    return _CONSTRUCTIONS[ConstructionTag(tag)]()


def simulate(cfg: SimConfig, replication: int = 0) -> Trajectory:
    """Run one replication with its own derived random streams."""
    cfg.measure.clear_cache()
    streams = RandomStreams.for_replication(cfg.seed, replication)
    return create_construction(cfg.construction).run(cfg, streams, replication)


def run_lifetime(cfg: SimConfig, rng: RandomStreams) -> Trajectory:
    return LifetimeConstruction().run(cfg, rng)


def run_jumpchain(cfg: SimConfig, rng: RandomStreams) -> Trajectory:
    return JumpChainConstruction().run(cfg, rng)


def run_density(cfg: SimConfig, rng: RandomStreams) -> Trajectory:
    return DensityConstruction().run(cfg, rng)


def state_at(traj: Trajectory, t: float, measure: Optional[HyperplaneMeasure] = None) -> Tessellation:
    """The tessellation after the last jump at or before time t."""
    if t < 0 or t > traj.t_end:
        raise OutOfRange(f"time {t} outside [0, {traj.t_end}]")
    tess = initial(traj.final.window, measure if measure is not None else traj.final.measure)
    for record in traj.history:
        if record.time > t:
            break
        tess.divide(record.divided_label, record.hyperplane, record.time, record.proposals)
    return tess


def holding_times(traj: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Completed holding times and the zeta of the state each was spent in."""
    times = np.array([0.0] + traj.jump_times)
    rates = np.array([r.zeta_before for r in traj.history], dtype=float)
    return np.diff(times), rates
