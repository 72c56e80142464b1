#!/usr/bin/env python
"""
Tests for tessellation state: division, xi, restriction, zeta bookkeeping
and the partition and history invariants
"""

import math
import sys
from unittest import mock

import numpy as np
import pytest

from stitlab.geometry import (
    Cell,
    Direction,
    Hyperplane,
    centroid,
    contains_point,
    facet_of_cut,
    projection_interval,
    volume,
)
from stitlab.measure import DirectionalDistribution, HyperplaneMeasure, hit_mass, sample_hitting, sample_window, zeta
from stitlab.tess import Tessellation, gamma_density_total, hit_cells, initial, restrict, xi
from stitlab.tree import ROOT, TreeTuple, TreeWord, leaves
from utils import DegenerateCut, NoHit, NonmonotoneTime, NotContained, UnknownLabel, with_resample

SQUARE = Cell.rectangle(0, 0, 1, 1)
AXIS = HyperplaneMeasure(1.0, DirectionalDistribution.axis_parallel())
MIXED = HyperplaneMeasure(1.0, DirectionalDistribution.discrete([
    (Direction.from_angle(0.0), 0.4),
    (Direction.from_angle(math.pi / 2), 0.4),
    (Direction.from_angle(0.9), 0.2),
]))
EAST = Direction.from_angle(0.0)
NORTH = Direction.from_angle(math.pi / 2)
MINUS, PLUS = TreeWord.parse("-"), TreeWord.parse("+")


def split_square(measure=AXIS) -> Tessellation:
    return initial(SQUARE, measure).divide(ROOT, Hyperplane(0.5, EAST), 0.3)


@with_resample(max_retries=100)
def random_division(tess: Tessellation, rng: np.random.Generator, time: float) -> None:
    labels = tess.labels()
    label = labels[int(rng.integers(len(labels)))]
    cell = tess.cells[label]
    while True:
        h = sample_hitting(tess.measure, cell, rng)
        lo, hi = projection_interval(cell, h.direction)
        if lo < h.alpha < hi:
            break
    tess.divide(label, h, time)


def random_tessellation(measure, n_jumps: int, seed: int) -> Tessellation:
    rng = np.random.default_rng(seed)
    tess = initial(SQUARE, measure)
    for step in range(n_jumps):
        random_division(tess, rng, float(step + 1))
    return tess


def test_initial_tessellation():
    tess = initial(SQUARE, AXIS)
    assert tess.labels() == [ROOT]
    assert tess.cells[ROOT] == SQUARE
    assert tess.zeta == hit_mass(AXIS, SQUARE)
    one_d = initial(Cell.interval(0, 1))
    assert one_d.n_cells == 1 and one_d.dimension == 1


def test_divide_square():
    before = initial(SQUARE, AXIS).zeta
    tess = split_square()
    assert tess.labels() == [MINUS, PLUS]
    assert tess.labels() == leaves(TreeTuple.parse(["", "-", "+"]))
    assert tess.cells[MINUS] == Cell.rectangle(0, 0, 0.5, 1, MINUS)
    facet = facet_of_cut(SQUARE, Hyperplane(0.5, EAST))
    assert abs(tess.zeta - (before + hit_mass(AXIS, facet))) < 1e-12
    assert gamma_density_total(tess, AXIS) > before
    assert tess.genealogy() == TreeTuple.parse(["", "-", "+"])
    assert abs(tess.total_boundary_length() - 1.0) < 1e-12


def test_divide_errors():
    tess = split_square()
    with pytest.raises(UnknownLabel):
        tess.divide(ROOT, Hyperplane(0.25, EAST), 1.0)
    with pytest.raises(NoHit):
        tess.divide(MINUS, Hyperplane(0.75, EAST), 1.0)
    with pytest.raises(NonmonotoneTime):
        tess.divide(MINUS, Hyperplane(0.25, EAST), 0.3)
    # A failed division leaves the state untouched.
    assert tess.n_cells == 2 and len(tess.history) == 1


def test_xi_examples():
    assert xi(initial(SQUARE, AXIS), Hyperplane(0.3, NORTH)) == 1
    tess = split_square()
    assert xi(tess, Hyperplane(0.3, NORTH)) == 2
    assert xi(tess, Hyperplane(0.25, EAST)) == 1
    assert hit_cells(tess, Hyperplane(0.25, EAST)) == [MINUS]
    with pytest.raises(NoHit):
        xi(tess, Hyperplane(2.0, EAST))


def test_restrict_examples():
    tess = split_square()
    full = restrict(tess, SQUARE)
    assert [c.vertices for _, c in full.ordered_cells()] == [c.vertices for _, c in tess.ordered_cells()]
    left = restrict(tess, Cell.rectangle(0, 0, 0.4, 1))
    assert left.n_cells == 1
    middle = restrict(tess, Cell.rectangle(0.25, 0, 0.75, 1))
    assert middle.n_cells == 2
    assert all(abs(volume(c) - 0.25) < 1e-12 for c in middle.cells.values())
    with pytest.raises(NotContained):
        restrict(tess, Cell.rectangle(0.5, 0.5, 1.5, 1.5))


def test_restriction_refines():
    tess = random_tessellation(MIXED, 20, seed=21)
    sub = Cell.rectangle(0.2, 0.1, 0.7, 0.8)
    coarse = restrict(tess.copy(), sub)
    rng = np.random.default_rng(22)
    label = tess.labels()[0]
    cell = tess.cells[label]
    h = sample_hitting(MIXED, cell, rng)
    finer = restrict(tess.copy().divide(label, h, 100.0), sub)
    finer.validate()
    for piece in finer.cells.values():
        c = centroid(piece)
        hosts = [host for host in coarse.cells.values() if contains_point(host, c)]
        assert hosts and any(all(contains_point(host, v) for v in piece.vertices) for host in hosts)


def test_partition_after_many_divisions():
    tess = random_tessellation(MIXED, 1000, seed=23)
    assert tess.n_cells == 1001
    tess.validate()
    total = math.fsum(volume(c) for c in tess.cells.values())
    assert abs(total - 1.0) <= 1e-9
    assert abs(tess.zeta - zeta(MIXED, tess)) <= 1e-8 * tess.zeta
    rng = np.random.default_rng(24)
    for _ in range(200):
        p = rng.random(2)
        assert sum(1 for c in tess.cells.values() if contains_point(c, p, tol=-1e-9)) <= 1


def test_grazing_cut_is_resampled():
    graze, good = Hyperplane(1e-14, EAST), Hyperplane(0.5, EAST)
    tess = initial(SQUARE, AXIS)
    with pytest.raises(DegenerateCut):
        tess.divide(ROOT, graze, 0.5)
    assert tess.labels() == [ROOT] and not tess.history
    with mock.patch.object(sys.modules[__name__], "sample_hitting", side_effect=[graze, good]):
        random_division(tess, np.random.default_rng(0), 0.5)
    assert tess.labels() == [MINUS, PLUS]
    assert tess.history[0].hyperplane == good


def test_mean_xi_equals_zeta_ratio():
    tess = random_tessellation(MIXED, 15, seed=25)
    rng = np.random.default_rng(26)
    n = 10000
    values = np.array([xi(tess, sample_window(MIXED, SQUARE, rng)) for _ in range(n)])
    expected = tess.zeta / hit_mass(MIXED, SQUARE)
    assert abs(values.mean() - expected) < 4 * values.std(ddof=1) / math.sqrt(n)


def test_serialization_replays_history():
    tess = random_tessellation(MIXED, 12, seed=27)
    back = Tessellation.from_dict(tess.to_dict(), MIXED)
    assert back.labels() == tess.labels()
    for w in tess.labels():
        assert np.allclose(back.cells[w].points, tess.cells[w].points)
    assert abs(back.zeta - tess.zeta) <= 1e-12 * tess.zeta


def test_one_dimensional_boundary_count():
    m = HyperplaneMeasure(1.0, DirectionalDistribution.isotropic(), dimension=1)
    tess = initial(Cell.interval(0, 1), m)
    tess.divide(ROOT, Hyperplane(0.4, Direction.unit()), 0.1)
    tess.divide(PLUS, Hyperplane(0.7, Direction.unit()), 0.2)
    assert tess.total_boundary_length() == 2.0
    assert abs(tess.zeta - 1.0) < 1e-12


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_") and callable(f)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"PASS {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"FAIL {test.__name__}: {type(e).__name__}: {e}")
    print("\nTest Result:", "SUCCESS" if not failed else "FAILED")
    sys.exit(0 if not failed else 1)
