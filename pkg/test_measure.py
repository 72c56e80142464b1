#!/usr/bin/env python
"""
Tests for hyperplane measures: hit masses, zeta, the increment identity
and the hit-distribution samplers
"""

import math
import pickle
import sys
from collections import Counter

import numpy as np
import pytest

from stitlab.geometry import Cell, Direction, Hyperplane, clip, facet_of_cut, perimeter, projection_interval
from stitlab.measure import (
    DirectionalDistribution,
    HyperplaneMeasure,
    hit_mass,
    sample_hitting,
    sample_hitting_by_rejection,
    width_table,
    zeta,
)
from stitlab.stats import chi_square_goodness, ks_uniform
from stitlab.tess import initial
from utils import ConfigError

SQUARE = Cell.rectangle(0, 0, 1, 1)
AXIS = HyperplaneMeasure(1.0, DirectionalDistribution.axis_parallel())
ISO = HyperplaneMeasure(1.0, DirectionalDistribution.isotropic())
EAST = Direction.from_angle(0.0)


def test_hit_mass_examples():
    assert abs(hit_mass(AXIS, SQUARE) - 1.0) < 1e-12
    assert abs(hit_mass(ISO, SQUARE) - 4 / math.pi) < 1e-9
    line = HyperplaneMeasure(2.5, DirectionalDistribution.isotropic(), dimension=1)
    assert abs(hit_mass(line, Cell.interval(0, 3)) - 7.5) < 1e-12


def test_isotropic_hit_mass_is_perimeter_over_pi():
    polygon = Cell.polygon([(0, 0), (3, 0.5), (2.5, 2), (0.2, 1.4)])
    assert abs(hit_mass(ISO, polygon) - perimeter(polygon) / math.pi) < 1e-9


def test_zeta_of_split_square():
    tess = initial(SQUARE, AXIS)
    assert abs(zeta(AXIS, tess) - 1.0) < 1e-12
    tess.divide(tess.labels()[0], Hyperplane(0.5, EAST), 0.1)
    assert abs(zeta(AXIS, tess) - 1.5) < 1e-12
    assert abs(tess.zeta - 1.5) < 1e-12


@pytest.mark.parametrize("measure", [AXIS, ISO], ids=["axis", "isotropic"])
def test_zeta_increment_equals_facet_mass(measure):
    rng = np.random.default_rng(3)
    cell = Cell.polygon([(0, 0), (2, 0), (2.5, 1), (1, 2), (-0.5, 1)])
    for _ in range(200 if measure is ISO else 1000):
        h = sample_hitting(measure, cell, rng)
        lo, hi = projection_interval(cell, h.direction)
        margin = 0.05 * (hi - lo)
        if not lo + margin < h.alpha < hi - margin:
            continue
        minus, plus = clip(cell, h)
        increment = hit_mass(measure, minus) + hit_mass(measure, plus) - hit_mass(measure, cell)
        facet = hit_mass(measure, facet_of_cut(cell, h))
        assert increment > 0
        assert abs(increment - facet) <= 1e-8 * facet
        measure.clear_cache()


def test_monotone_hit_mass():
    inner = Cell.polygon([(0.2, 0.1), (0.8, 0.3), (0.5, 0.9)])
    for m in (AXIS, ISO):
        assert hit_mass(m, inner) <= hit_mass(m, SQUARE)


def test_direction_frequencies_follow_width_weighting():
    rng = np.random.default_rng(5)
    rect = Cell.rectangle(0, 0, 2, 1)
    n = 10000
    draws = [sample_hitting(AXIS, rect, rng) for _ in range(n)]
    counts = Counter(h.direction for h in draws)
    east = counts[EAST]
    # Width 2 across vertical cuts, 1 across horizontal ones.
    report = chi_square_goodness([east, n - east], [2 / 3, 1 / 3])
    assert report.p_value > 0.001
    positions = []
    for h in draws:
        lo, hi = projection_interval(rect, h.direction)
        positions.append((h.alpha - lo) / (hi - lo))
    assert ks_uniform(positions).p_value > 0.001


def test_interval_cuts_are_uniform():
    rng = np.random.default_rng(6)
    line = HyperplaneMeasure(1.0, DirectionalDistribution.isotropic(), dimension=1)
    cell = Cell.interval(2.0, 5.0)
    alphas = [(sample_hitting(line, cell, rng).alpha - 2.0) / 3.0 for _ in range(5000)]
    assert ks_uniform(alphas).p_value > 0.001


def test_rejection_proposals_match_mass_ratio():
    rng = np.random.default_rng(7)
    window = SQUARE
    assert sample_hitting_by_rejection(AXIS, window, window, rng)[1] == 1
    sub = Cell.rectangle(0, 0, 0.5, 0.5)
    n = 4000
    proposals = np.array([sample_hitting_by_rejection(AXIS, window, sub, rng)[1] for _ in range(n)])
    # Geometric with success probability mass(sub) / mass(window) = 1/2.
    assert abs(proposals.mean() - 2.0) < 4 * math.sqrt(2.0 / n)


def test_width_table_on_grid_and_atoms():
    assert width_table(AXIS, SQUARE).widths.shape == (2,)
    table = width_table(ISO, SQUARE).widths
    assert table.shape == (4097,)
    assert abs(table[0] - 1.0) < 1e-12
    assert abs(table.max() - math.sqrt(2)) < 1e-6


def test_measure_config_validation():
    with pytest.raises(ConfigError) as e:
        HyperplaneMeasure.from_dict({"gamma": 0})
    assert e.value.field == "gamma"
    with pytest.raises(ConfigError) as e:
        HyperplaneMeasure.from_dict({"gamma": 1, "theta": {"kind": "discrete", "atoms": [{"phi": 0, "w": 1}]}})
    assert e.value.field == "theta"
    with pytest.raises(ConfigError):
        HyperplaneMeasure.from_dict({"gamma": 1, "theta": {"kind": "discrete",
                                                           "atoms": [{"phi": 0, "w": 0.3}, {"phi": 1, "w": 0.3}]}})
    m = HyperplaneMeasure.from_dict({"gamma": 2, "theta": {"kind": "discrete",
                                                           "atoms": [{"phi": 0, "w": 0.5}, {"phi": math.pi / 2, "w": 0.5}]}})
    assert HyperplaneMeasure.from_dict(m.to_dict()).theta == m.theta


def test_cache_eviction_and_pickling():
    m = HyperplaneMeasure(1.0, DirectionalDistribution.isotropic())
    hit_mass(m, SQUARE)
    width_table(m, SQUARE)
    assert SQUARE in m._mass_cache and SQUARE in m._table_cache
    m.forget(SQUARE)
    assert SQUARE not in m._mass_cache and SQUARE not in m._table_cache
    hit_mass(m, SQUARE)
    copy = pickle.loads(pickle.dumps(m))
    assert copy.gamma == m.gamma and copy.theta == m.theta
    assert copy._mass_cache == {}


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_") and callable(f)]
    failed = 0
    for test in tests:
        try:
            if test is test_zeta_increment_equals_facet_mass:
                test(AXIS)
                test(ISO)
            else:
                test()
            print(f"PASS {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"FAIL {test.__name__}: {type(e).__name__}: {e}")
    print("\nTest Result:", "SUCCESS" if not failed else "FAILED")
    sys.exit(0 if not failed else 1)
