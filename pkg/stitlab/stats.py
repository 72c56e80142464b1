"""
stats.py - Statistical test kit for cross-validating the simulators:
empirical summaries, chi-square and Kolmogorov-Smirnov tests, exponentiality
of holding times, the selection and hyperplane law harnesses and the
proposal-count benchmark
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from utils import InsufficientData
from stitlab.construct import (
    ConstructionTag,
    RandomStreams,
    SimConfig,
    create_construction,
    simulate,
)
from stitlab.geometry import Direction, projection_interval
from stitlab.measure import GRID, HyperplaneMeasure, grid_cdf, hit_mass, width_table, zeta
from stitlab.tess import Tessellation, initial
from stitlab.tree import TreeWord

logger = logging.getLogger("Stats")

DEFAULT_ALPHA = 0.01
DEFAULT_MIN_BIN = 5


class TestKind(Enum):
    CHI_SQUARE = "chi-square"
    KS = "KS"
    Z = "z"


@dataclass
class TestReport:
    """Outcome of one hypothesis test; passes when p_value > alpha."""
    kind: TestKind
    statistic: float
    p_value: float
    alpha: float = DEFAULT_ALPHA
    name: str = ""
    details: Optional[Dict[str, Any]] = None

    # Keep pytest from collecting this class.
    __test__ = False

    def __post_init__(self):
        if self.details is None:
            self.details = {}
        if math.isnan(self.p_value):
            raise InsufficientData(f"{self.name or self.kind.value}: p-value is undefined")
        self.p_value = min(max(float(self.p_value), 0.0), 1.0)
        self.statistic = float(self.statistic)

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "pass": self.passed,
            "details": self.details,
        }


@dataclass
class EmpiricalSummary:
    """Sample values with their moments and histogram.

    Integer-valued samples are binned per value; real samples use numpy's
    automatic bin edges.
    """
    values: np.ndarray
    n: int
    mean: float
    variance: float
    histogram: Dict[Any, int]

    @classmethod
    def from_values(cls, values: Sequence[float]) -> 'EmpiricalSummary':
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise InsufficientData("empirical summary of an empty sample")
        if np.all(arr == np.round(arr)):
            histogram = dict(sorted(Counter(int(v) for v in arr).items()))
        else:
            counts, edges = np.histogram(arr, bins="auto")
            histogram = {float(e): int(c) for e, c in zip(edges[:-1], counts)}
        variance = float(arr.var(ddof=1)) if arr.size > 1 else 0.0
        return cls(arr, int(arr.size), float(arr.mean()), variance, histogram)


def _pool_adjacent(observed: np.ndarray, expected: np.ndarray, min_bin: float) -> List[List[int]]:
    """Groups of adjacent bin indices with expected count >= min_bin each.

    A short remainder at the end is merged into the last group.
    """
    groups: List[List[int]] = []
    current: List[int] = []
    acc = 0.0
    for i, e in enumerate(expected):
        current.append(i)
        acc += e
        if acc >= min_bin:
            groups.append(current)
            current, acc = [], 0.0
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)
    return groups


def chi_square_two_sample(a: EmpiricalSummary, b: EmpiricalSummary,
                          min_bin: int = DEFAULT_MIN_BIN,
                          alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Chi-square homogeneity test of two count samples."""
    support = sorted(set(a.histogram) | set(b.histogram))
    table = np.array([[a.histogram.get(v, 0) for v in support],
                      [b.histogram.get(v, 0) for v in support]], dtype=float)
    total = table.sum()
    # Smallest expected cell of a column is its total times the smaller row share.
    column_floor = table.sum(axis=0) * table.sum(axis=1).min() / total
    groups = _pool_adjacent(table.sum(axis=0), column_floor, min_bin)
    if len(groups) < 2:
        raise InsufficientData(f"only {len(groups)} usable bin(s) after pooling")
    pooled = np.array([[row[g].sum() for g in groups] for row in table])
    statistic, p_value, _, _ = stats.chi2_contingency(pooled, correction=False)
    return TestReport(TestKind.CHI_SQUARE, statistic, p_value, alpha, "chi-square two-sample",
                      {"bins": len(groups), "n_a": a.n, "n_b": b.n})


def chi_square_goodness(observed: Sequence[int], expected_probs: Sequence[float],
                        min_bin: int = DEFAULT_MIN_BIN,
                        alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Goodness of fit of counts to cell probabilities.

    A missing tail (probabilities summing below 1) becomes one extra bin
    with zero observations.
    """
    obs = np.asarray(observed, dtype=float)
    probs = np.asarray(expected_probs, dtype=float)
    if obs.shape != probs.shape:
        raise ValueError(f"{obs.size} observed bins but {probs.size} probabilities")
    tail = 1.0 - probs.sum()
    if tail > 1e-12:
        obs = np.append(obs, 0.0)
        probs = np.append(probs, tail)
    n = obs.sum()
    if n < 1:
        raise InsufficientData("no observations")
    expected = n * probs / probs.sum()
    groups = _pool_adjacent(obs, expected, min_bin)
    if len(groups) < 2:
        raise InsufficientData(f"only {len(groups)} usable bin(s) after pooling")
    f_obs = np.array([obs[g].sum() for g in groups])
    f_exp = np.array([expected[g].sum() for g in groups])
    statistic, p_value = stats.chisquare(f_obs, f_exp)
    return TestReport(TestKind.CHI_SQUARE, statistic, p_value, alpha, "chi-square goodness of fit",
                      {"bins": len(groups), "n": int(n)})


def ks_exponential(samples: Sequence[float], rate_per_sample: Sequence[float],
                   alpha: float = DEFAULT_ALPHA) -> TestReport:
    """KS test of rate_i * sample_i against Exp(1)."""
    x = np.asarray(samples, dtype=float)
    r = np.asarray(rate_per_sample, dtype=float)
    if x.size < 2 or x.size != r.size:
        raise InsufficientData(f"need matching samples and rates, got {x.size} and {r.size}")
    if np.any(x < 0) or np.any(r <= 0):
        raise InsufficientData("samples must be non-negative and rates positive")
    statistic, p_value = stats.kstest(x * r, "expon")
    return TestReport(TestKind.KS, statistic, p_value, alpha, "KS exponential", {"n": int(x.size)})


def ks_two_sample(a: Sequence[float], b: Sequence[float], alpha: float = DEFAULT_ALPHA) -> TestReport:
    x, y = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if x.size < 2 or y.size < 2:
        raise InsufficientData(f"KS two-sample needs two samples of size >= 2, got {x.size} and {y.size}")
    statistic, p_value = stats.ks_2samp(x, y)
    return TestReport(TestKind.KS, statistic, p_value, alpha, "KS two-sample",
                      {"n_a": int(x.size), "n_b": int(y.size)})


def ks_uniform(samples: Sequence[float], alpha: float = DEFAULT_ALPHA) -> TestReport:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientData(f"KS uniform needs at least 2 samples, got {x.size}")
    statistic, p_value = stats.kstest(x, "uniform")
    return TestReport(TestKind.KS, statistic, p_value, alpha, "KS uniform", {"n": int(x.size)})


def z_test(estimate_a: float, se_a: float, estimate_b: float, se_b: float,
           alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Two-sided z-test of equal means given independent standard errors."""
    se = math.hypot(se_a, se_b)
    diff = estimate_a - estimate_b
    if se == 0.0:
        z, p_value = (0.0, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), 0.0)
    else:
        z = diff / se
        p_value = 2.0 * stats.norm.sf(abs(z))
    return TestReport(TestKind.Z, z, p_value, alpha, "z",
                      {"estimate_a": estimate_a, "estimate_b": estimate_b, "combined_se": se})


def _as_streams(rng: Union[RandomStreams, np.random.Generator]) -> RandomStreams:
    if isinstance(rng, RandomStreams):
        return rng
    seeds = rng.integers(0, 2 ** 63, size=3)
    return RandomStreams(*(np.random.default_rng(int(s)) for s in seeds))


def _attach(frozen: Tessellation, m: HyperplaneMeasure) -> Tessellation:
    if frozen.measure is m:
        return frozen
    attached = frozen.copy()
    attached.measure = m
    attached.zeta_cache = zeta(m, attached)
    return attached


def selection_frequency_test(frozen: Tessellation, m: HyperplaneMeasure,
                             construction_tag: ConstructionTag, n: int,
                             rng: Union[RandomStreams, np.random.Generator],
                             alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Chi-square of the cells selected by n single steps from a frozen
    state against the law mass / zeta."""
    tess = _attach(frozen, m)
    if tess.n_cells < 2:
        raise InsufficientData("selection test needs at least two cells")
    construction = create_construction(construction_tag)
    streams = _as_streams(rng)
    state = construction.start(tess)

    labels = tess.labels()
    counts = Counter(construction.select(tess, streams, state)[0] for _ in range(n))
    observed = [counts.get(w, 0) for w in labels]
    probs = [hit_mass(m, tess.cells[w]) / tess.zeta for w in labels]
    report = chi_square_goodness(observed, probs, alpha=alpha)
    report.name = f"selection frequency ({ConstructionTag(construction_tag).value})"
    report.details.update({"labels": [str(w) for w in labels], "observed": observed, "expected": probs})
    return report


def _isotropic_direction_cdf(m: HyperplaneMeasure, cell) -> Callable[[float], float]:
    cdf = grid_cdf(width_table(m, cell).widths)
    return lambda phi: float(np.interp(phi, GRID, cdf) / cdf[-1])


def hyperplane_law_test(frozen: Tessellation, m: HyperplaneMeasure,
                        construction_tag: ConstructionTag, label: TreeWord, n: int,
                        rng: Union[RandomStreams, np.random.Generator],
                        alpha: float = DEFAULT_ALPHA) -> List[TestReport]:
    """Conditional law of the dividing hyperplane given that `label` is selected.

    Returns a direction report (chi-square over atoms, or KS of the width
    weighted angle CDF for isotropic theta) and a KS report of the cut
    position rescaled to the cell's projection interval.
    """
    tess = _attach(frozen, m)
    cell = tess.cells[label]
    construction = create_construction(construction_tag)
    streams = _as_streams(rng)
    state = construction.start(tess)

    directions: List[Direction] = []
    positions: List[float] = []
    for _ in range(n):
        selected, h, _ = construction.select(tess, streams, state)
        if selected != label:
            continue
        lo, hi = projection_interval(cell, h.direction)
        directions.append(h.direction)
        positions.append((h.alpha - lo) / (hi - lo))
    if len(positions) < 2:
        raise InsufficientData(f"cell {label!s} was selected {len(positions)} time(s) in {n} steps")
    logger.debug(f"cell {label!s} selected {len(positions)} of {n} steps")

    tag = ConstructionTag(construction_tag).value
    if m.uses_grid:
        cdf = _isotropic_direction_cdf(m, cell)
        direction_report = ks_uniform([cdf(d.phi) for d in directions], alpha)
    else:
        atoms = m.directions
        widths = width_table(m, cell).widths
        probs = m.direction_weights * widths / float(np.dot(m.direction_weights, widths))
        counts = Counter(directions)
        direction_report = chi_square_goodness([counts.get(d, 0) for d in atoms], probs, alpha=alpha)
    direction_report.name = f"hyperplane direction ({tag})"

    position_report = ks_uniform(positions, alpha)
    position_report.name = f"hyperplane position ({tag})"
    return [direction_report, position_report]


def benchmark_proposals(cfg: SimConfig,
                        constructions: Sequence[ConstructionTag] = tuple(ConstructionTag)) -> List[Dict[str, Any]]:
    """Mean proposals per jump by number of cells, per construction.

    `predicted` is the mean of mass(W) / mass(C*) over the divided cells,
    the expected proposal count of rejection against the window.
    """
    m = cfg.measure
    rows: List[Dict[str, Any]] = []
    for tag in constructions:
        tag = ConstructionTag(tag)
        run_cfg = SimConfig(cfg.window, m, cfg.t_end, cfg.seed, tag, cfg.replications, cfg.max_jumps)
        proposals: Dict[int, List[int]] = {}
        predicted: Dict[int, List[float]] = {}
        for replication in range(cfg.replications):
            traj = simulate(run_cfg, replication)
            replay = initial(cfg.window, m)
            window_mass = hit_mass(m, replay.cells[replay.labels()[0]])
            for record in traj.history:
                size = replay.n_cells
                ratio = 1.0 if tag == ConstructionTag.DENSITY else \
                    window_mass / hit_mass(m, replay.cells[record.divided_label])
                proposals.setdefault(size, []).append(record.proposals)
                predicted.setdefault(size, []).append(ratio)
                replay.divide(record.divided_label, record.hyperplane, record.time, record.proposals)
        for size in sorted(proposals):
            rows.append({
                "construction": tag.value,
                "n_cells": size,
                "jumps": len(proposals[size]),
                "proposals_per_jump": float(np.mean(proposals[size])),
                "predicted": float(np.mean(predicted[size])),
            })
        logger.info(f"{tag.value}: {sum(len(p) for p in proposals.values())} jumps benchmarked")
    return rows


def mean_ratio_by_cells(rows: List[Dict[str, Any]], construction: ConstructionTag,
                        edges: Sequence[int]) -> List[float]:
    """Jump-weighted proposals per jump of one construction within cell-count bins [e_i, e_i+1)."""
    tag = ConstructionTag(construction).value
    result = []
    for lo, hi in zip(edges, edges[1:]):
        chosen = [r for r in rows if r["construction"] == tag and lo <= r["n_cells"] < hi]
        jumps = sum(r["jumps"] for r in chosen)
        result.append(sum(r["proposals_per_jump"] * r["jumps"] for r in chosen) / jumps if jumps else math.nan)
    return result


def calibration(test_fn: Callable[[int], TestReport], repetitions: int) -> float:
    """Fraction of repetitions whose report passes; test_fn receives the repetition index."""
    passed = sum(1 for i in range(repetitions) if test_fn(i).passed)
    return passed / repetitions
