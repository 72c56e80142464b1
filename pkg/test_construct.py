#!/usr/bin/env python
"""
Tests for the simulators: configuration, determinism, the small-time laws,
selection rules, holding times and agreement between constructions
"""

import math
import sys
from collections import Counter

import numpy as np
import pytest
from scipy import stats as sps

from stitlab.construct import (
    ConstructionTag,
    DensityConstruction,
    JumpChainConstruction,
    RandomStreams,
    SimConfig,
    Trajectory,
    create_construction,
    holding_times,
    run_density,
    run_jumpchain,
    run_lifetime,
    sample_alpha,
    simulate,
    state_at,
)
from stitlab.geometry import Cell, Direction, Hyperplane, clip, width
from stitlab.measure import DirectionalDistribution, HyperplaneMeasure, hit_mass
from stitlab.stats import (
    EmpiricalSummary,
    chi_square_goodness,
    chi_square_two_sample,
    ks_exponential,
    ks_two_sample,
    z_test,
)
from stitlab.tess import initial, restrict
from stitlab.tree import ROOT, TreeWord
from utils import ConfigError, OutOfRange

AXIS_THETA = {"kind": "discrete", "atoms": [{"phi": 0.0, "w": 0.5}, {"phi": math.pi / 2, "w": 0.5}]}
SQUARE_CONFIG = {
    "window": {"rectangle": [0, 0, 1, 1]},
    "measure": {"gamma": 1.0, "theta": AXIS_THETA},
    "t_end": 1.0,
    "seed": 7,
    "construction": "density",
}
SQUARE = Cell.rectangle(0, 0, 1, 1)
EAST = Direction.from_angle(0.0)
MINUS, PLUS = TreeWord.parse("-"), TreeWord.parse("+")
# P(two cells at t=1) for the unit square, axis-parallel theta, gamma=1.
P_TWO_CELLS = 2 * (math.exp(-1.0) - math.exp(-1.5))


def config(**overrides) -> SimConfig:
    data = dict(SQUARE_CONFIG)
    data.update(overrides)
    return SimConfig.from_dict(data)


def cell_counts(cfg: SimConfig, n: int):
    return [simulate(cfg, i).n_cells for i in range(n)]


def assert_binomial_sum(indicators, probs):
    """Sum of independent Bernoulli outcomes against the sum of their probabilities."""
    x, p = np.asarray(indicators, dtype=float), np.asarray(probs, dtype=float)
    report = z_test(float(x.sum()), 0.0, float(p.sum()), math.sqrt(float(np.sum(p * (1 - p)))))
    assert report.p_value > 0.001, report.to_dict()


def test_config_errors_name_the_field():
    cases = [
        ({"measure": {"gamma": 0, "theta": AXIS_THETA}}, "gamma"),
        ({"t_end": -1.0}, "t_end"),
        ({"t_end": None}, "t_end"),
        ({"construction": "voronoi"}, "construction"),
        ({"replications": 0}, "replications"),
        ({"seed": -3}, "seed"),
        ({"window": {"vertices": [[0, 0], [1, 1]]}}, "window"),
        ({"max_jumps": -1}, "max_jumps"),
    ]
    for overrides, name in cases:
        with pytest.raises(ConfigError) as e:
            config(**overrides)
        assert e.value.field == name, overrides


def test_config_hash_ignores_key_order():
    cfg = config()
    reordered = SimConfig.from_dict(dict(reversed(list(SQUARE_CONFIG.items()))))
    assert cfg.config_hash() == reordered.config_hash()
    assert cfg.config_hash() != config(seed=8).config_hash()
    assert SimConfig.from_dict(cfg.to_dict()).config_hash() == cfg.config_hash()
    unbounded = config(t_end=None, max_jumps=5)
    assert math.isinf(unbounded.t_end) and unbounded.to_dict()["t_end"] is None


def test_same_seed_same_trajectory():
    for tag in ConstructionTag:
        cfg = config(construction=tag.value, t_end=6.0)
        a = simulate(cfg, 3)
        assert a.n_jumps > 0
        b = simulate(cfg, 3)
        assert [r.to_dict() for r in a.history] == [r.to_dict() for r in b.history]
        other = simulate(cfg, 4)
        assert [r.to_dict() for r in a.history] != [r.to_dict() for r in other.history]


def test_tiny_horizon_leaves_one_cell():
    for tag in ConstructionTag:
        traj = simulate(config(construction=tag.value, t_end=1e-9))
        assert traj.n_cells == 1 and traj.n_jumps == 0


@pytest.mark.parametrize("tag", list(ConstructionTag), ids=[t.value for t in ConstructionTag])
def test_survival_probability(tag):
    n = 2000
    counts = cell_counts(config(construction=tag.value), n)
    p = math.exp(-1.0)
    frequency = sum(1 for c in counts if c == 1) / n
    assert abs(frequency - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_two_cell_probability():
    n = 4000
    counts = cell_counts(config(seed=11), n)
    frequency = sum(1 for c in counts if c == 2) / n
    assert abs(P_TWO_CELLS - 0.289498) < 1e-6
    assert abs(frequency - P_TWO_CELLS) < 4 * math.sqrt(P_TWO_CELLS * (1 - P_TWO_CELLS) / n)


def test_jumpchain_selects_by_hit_mass_on_interval():
    m = HyperplaneMeasure(1.0, DirectionalDistribution.isotropic(), dimension=1)
    tess = initial(Cell.interval(0, 4), m).divide(ROOT, Hyperplane(1.0, Direction.unit()), 0.5)
    streams = RandomStreams.for_replication(5)
    construction = JumpChainConstruction()
    n = 8000
    counts = Counter(construction.select(tess, streams)[0] for _ in range(n))
    report = chi_square_goodness([counts[MINUS], counts[PLUS]], [0.25, 0.75])
    assert report.p_value > 0.001


class FixedLineDensity(DensityConstruction):
    def __init__(self, h: Hyperplane):
        super().__init__()
        self.h = h

    def sample_hyperplane(self, tess, streams, state=None):
        return self.h


def test_density_picks_uniformly_among_hit_cells():
    m = HyperplaneMeasure(1.0, DirectionalDistribution.axis_parallel())
    tess = initial(Cell.rectangle(0, 0, 1, 1), m).divide(ROOT, Hyperplane(0.5, Direction.from_angle(0.0)), 0.2)
    streams = RandomStreams.for_replication(9)
    across = FixedLineDensity(Hyperplane(0.3, Direction.from_angle(math.pi / 2)))
    n = 4000
    counts = Counter(across.select(tess, streams)[0] for _ in range(n))
    assert chi_square_goodness([counts[MINUS], counts[PLUS]], [0.5, 0.5]).p_value > 0.001
    right = FixedLineDensity(Hyperplane(0.75, Direction.from_angle(0.0)))
    assert all(right.select(tess, streams) == (PLUS, right.h, 1) for _ in range(50))


def test_density_uses_every_proposal():
    for i in range(20):
        traj = simulate(config(t_end=3.0), i)
        assert traj.proposal_count == traj.n_jumps


def test_rejection_constructions_count_proposals():
    cfg = config(construction="jumpchain", t_end=4.0)
    traj = next(t for t in (simulate(cfg, i) for i in range(50)) if t.n_jumps > 0)
    assert traj.proposal_count >= traj.n_jumps
    assert all(r.proposals >= 1 for r in traj.history)


@pytest.mark.parametrize("tag", list(ConstructionTag), ids=[t.value for t in ConstructionTag])
def test_holding_times_are_exponential(tag):
    cfg = config(construction=tag.value, t_end=None, max_jumps=10, seed=13)
    samples, rates = [], []
    for i in range(200):
        traj = simulate(cfg, i)
        assert traj.n_jumps == 10
        diffs, zetas = holding_times(traj)
        samples.extend(diffs)
        rates.extend(zetas)
    assert ks_exponential(samples, rates).p_value > 0.001


def test_state_at_and_out_of_range():
    cfg = config(t_end=3.0, seed=17)
    traj = next(t for t in (simulate(cfg, i) for i in range(50)) if t.n_jumps >= 2)
    assert state_at(traj, 0.0).n_cells == 1
    assert state_at(traj, 3.0).labels() == traj.final.labels()
    times = traj.jump_times
    assert state_at(traj, times[1]).n_cells == 3
    assert state_at(traj, (times[0] + times[1]) / 2).n_cells == 2
    with pytest.raises(OutOfRange):
        state_at(traj, -0.1)
    with pytest.raises(OutOfRange):
        state_at(traj, 3.5)


def test_trajectory_records_replay():
    cfg = config(t_end=3.0, seed=19)
    traj = simulate(cfg, 2)
    back = Trajectory.from_records(traj.header(), [r.to_dict() for r in traj.history], cfg.measure)
    assert back.construction == traj.construction
    assert (back.seed, back.replication, back.t_end) == (19, 2, 3.0)
    assert back.final.labels() == traj.final.labels()
    assert back.jump_times == traj.jump_times
    for w in traj.final.labels():
        assert np.allclose(back.final.cells[w].points, traj.final.cells[w].points)


def test_run_functions_match_tags():
    cfg = config(t_end=2.0)
    for run, tag in ((run_lifetime, ConstructionTag.LIFETIME), (run_jumpchain, ConstructionTag.JUMPCHAIN),
                     (run_density, ConstructionTag.DENSITY)):
        traj = run(cfg, RandomStreams.for_replication(cfg.seed))
        assert traj.construction == tag
        assert all(a < b for a, b in zip(traj.jump_times, traj.jump_times[1:]))
        assert all(t <= cfg.t_end for t in traj.jump_times)
        traj.final.validate()


def test_density_cache_holds_only_live_cells():
    cfg = config(measure={"gamma": 1.0, "theta": {"kind": "isotropic"}}, t_end=None, max_jumps=300)
    traj = simulate(cfg)
    assert traj.n_jumps == 300
    live = set(traj.final.cells.values())
    assert set(cfg.measure._table_cache) == live
    assert set(cfg.measure._mass_cache) == live


@pytest.mark.parametrize("tag", list(ConstructionTag), ids=[t.value for t in ConstructionTag])
def test_joint_law_of_cell_and_direction(tag):
    m = HyperplaneMeasure(1.0, DirectionalDistribution.axis_parallel())
    tess = initial(SQUARE, m).divide(ROOT, Hyperplane(0.3, EAST), 0.1)
    construction = create_construction(tag)
    streams = RandomStreams.for_replication(59)
    state = construction.start(tess)
    n = 6000
    draws = Counter()
    for _ in range(n):
        label, h, _ = construction.select(tess, streams, state)
        draws[(label, h.direction)] += 1
    keys = [(w, d) for w in tess.labels() for d, _ in m.theta.atoms]
    # P(cell C, direction u) = gamma * theta(u) * width(C, u) / zeta
    probs = [m.gamma * weight * width(tess.cells[w], d) / tess.zeta
             for w in tess.labels() for d, weight in m.theta.atoms]
    observed = [draws[k] for k in keys]
    assert sum(observed) == n
    assert chi_square_goodness(observed, probs).p_value > 0.001


@pytest.mark.parametrize("tag", list(ConstructionTag), ids=[t.value for t in ConstructionTag])
def test_children_regenerate_after_first_jump(tag):
    # Given the first cut before t=1, each child runs as its own process for one more time unit.
    cfg = config(construction=tag.value, t_end=2.0, seed=47)
    m = cfg.measure
    fired, p_fired, vertical, p_vertical, both, p_both = [], [], [], [], [], []
    for i in range(1500):
        traj = simulate(cfg, i)
        if not traj.history or traj.history[0].time >= 1.0:
            continue
        first = traj.history[0]
        outcomes = []
        for child in clip(SQUARE, first.hyperplane):
            prefix = str(child.label)
            inside = [r for r in traj.history[1:] if str(r.divided_label).startswith(prefix)]
            mass = hit_mass(m, child)
            hit = bool(inside) and inside[0].time <= first.time + 1.0
            p = 1.0 - math.exp(-mass)
            fired.append(hit)
            p_fired.append(p)
            outcomes.append((hit, p))
            if inside:
                vertical.append(inside[0].hyperplane.direction == EAST)
                p_vertical.append(m.gamma * 0.5 * width(child, EAST) / mass)
        both.append(outcomes[0][0] and outcomes[1][0])
        p_both.append(outcomes[0][1] * outcomes[1][1])
    assert len(both) > 800
    assert_binomial_sum(fired, p_fired)
    assert_binomial_sum(vertical, p_vertical)
    assert_binomial_sum(both, p_both)


def test_mean_cell_count_below_birth_chain_bound():
    n = 500
    for theta in (AXIS_THETA, {"kind": "isotropic"}):
        cfg = config(measure={"gamma": 1.0, "theta": theta}, construction="lifetime", t_end=2.0, seed=53)
        counts = np.array(cell_counts(cfg, n), dtype=float)
        bound = math.exp(hit_mass(cfg.measure, cfg.window) * cfg.t_end)
        assert counts.mean() <= bound + 3 * counts.std(ddof=1) / math.sqrt(n)


def test_jumpchain_agrees_with_other_constructions():
    n = 1000
    chain = [simulate(config(construction="jumpchain", t_end=1.5, seed=61), i).final for i in range(n)]
    density = cell_counts(config(construction="density", t_end=1.5, seed=67), n)
    lifetime = [simulate(config(construction="lifetime", t_end=1.5, seed=71), i).final.total_boundary_length()
                for i in range(n)]
    counts = chi_square_two_sample(EmpiricalSummary.from_values([f.n_cells for f in chain]),
                                   EmpiricalSummary.from_values(density))
    assert counts.p_value > 0.001
    assert ks_two_sample([f.total_boundary_length() for f in chain], lifetime).p_value > 0.001


def test_sample_alpha_follows_overlap_density():
    rng = np.random.default_rng(23)
    intervals = np.array([[0.0, 1.0], [0.5, 1.5]])
    n = 8000
    draws = np.array([sample_alpha(intervals, rng) for _ in range(n)])
    assert draws.min() >= 0.0 and draws.max() <= 1.5
    inside = np.count_nonzero((draws >= 0.5) & (draws < 1.0))
    assert abs(inside / n - 0.5) < 4 * math.sqrt(0.25 / n)


def test_interval_counts_are_poisson():
    # Zeta is the total length on an interval, so the jump count is Poisson(gamma * |W| * t).
    cfg = SimConfig.from_dict({
        "window": {"lo": 0, "hi": 2},
        "measure": {"gamma": 1.0, "theta": {"kind": "isotropic"}},
        "t_end": 1.0,
        "seed": 29,
    })
    n = 3000
    jumps = Counter(simulate(cfg, i).n_jumps for i in range(n))
    k_max = max(jumps)
    observed = [jumps.get(k, 0) for k in range(k_max + 1)]
    probs = sps.poisson.pmf(np.arange(k_max + 1), 2.0)
    assert chi_square_goodness(observed, probs).p_value > 0.001


def test_lifetime_and_density_agree():
    n = 1500
    lifetime = EmpiricalSummary.from_values(cell_counts(config(construction="lifetime", t_end=1.5, seed=31), n))
    density = EmpiricalSummary.from_values(cell_counts(config(construction="density", t_end=1.5, seed=37), n))
    assert chi_square_two_sample(lifetime, density).p_value > 0.001


def test_restriction_matches_direct_simulation():
    n = 600
    big = config(window={"rectangle": [0, 0, 2, 2]}, t_end=1.0, seed=41)
    sub = Cell.rectangle(0, 0, 1, 1)
    restricted = [restrict(simulate(big, i).final, sub).n_cells for i in range(n)]
    direct = cell_counts(config(t_end=1.0, seed=43), n)
    report = chi_square_two_sample(EmpiricalSummary.from_values(restricted), EmpiricalSummary.from_values(direct))
    assert report.p_value > 0.001


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_") and callable(f)]
    failed = 0
    for test in tests:
        try:
            if test in (test_survival_probability, test_holding_times_are_exponential,
                        test_joint_law_of_cell_and_direction, test_children_regenerate_after_first_jump):
                for tag in ConstructionTag:
                    test(tag)
            else:
                test()
            print(f"PASS {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"FAIL {test.__name__}: {type(e).__name__}: {e}")
    print("\nTest Result:", "SUCCESS" if not failed else "FAILED")
    sys.exit(0 if not failed else 1)
