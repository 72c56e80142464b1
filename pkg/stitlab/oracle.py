"""
oracle.py - Exact marginal law of the number of cells at a fixed time,
evaluated without simulating jump times: the embedded division chain is
sampled (or enumerated for small k) and weighted by the probability that
exactly k exponential stages with the chain's rates complete by time t
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from utils import ConfigError, DegenerateRates, OutOfRange, TooLarge, with_resample
from stitlab.geometry import Cell, Hyperplane, projection_interval, volume
from stitlab.measure import HyperplaneMeasure, hit_mass, sample_hitting
from stitlab.tess import Tessellation, initial
from stitlab.tree import TreeTuple, enumerate_theta, extend

logger = logging.getLogger("Oracle")

MAX_K = 12
MIN_SAMPLES = 1000
MAX_EXHAUSTIVE_K = 3
RATE_COINCIDENCE = 1e-12
# Largest tolerated ratio of summed term magnitudes to the result.
MAX_CANCELLATION = 1e6


@dataclass(frozen=True)
class RateSequence:
    """Total hit masses zeta_0 <= zeta_1 <= ... along one division chain."""
    rates: Tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if not rates:
            raise ValueError("rate sequence is empty")
        if any(not (r > 0 and math.isfinite(r)) for r in rates):
            raise ValueError(f"rates must be positive and finite: {rates}")
        if any(b < a * (1 - 1e-9) for a, b in zip(rates, rates[1:])):
            raise ValueError(f"rates must not decrease: {rates}")
        object.__setattr__(self, "rates", rates)

    @property
    def k(self) -> int:
        return len(self.rates) - 1

    def has_coincidence(self, tol: float = RATE_COINCIDENCE) -> bool:
        r = np.asarray(self.rates)
        diffs = np.abs(r[:, None] - r[None, :])
        scale = np.maximum(r[:, None], r[None, :])
        np.fill_diagonal(diffs, np.inf)
        return bool(np.any(diffs <= tol * scale))


def _as_rates(rates) -> RateSequence:
    return rates if isinstance(rates, RateSequence) else RateSequence(tuple(rates))


def hypoexp_window_prob(rates, t: float) -> float:
    """P(S_k <= t < S_k+1) for independent exponential stages with distinct rates.

    Partial-fraction form:
        prod_{j<k} r_j * sum_i exp(-r_i t) / prod_{j != i} (r_j - r_i)
    """
    seq = _as_rates(rates)
    if t <= 0:
        return 1.0 if seq.k == 0 else 0.0
    if seq.has_coincidence():
        raise DegenerateRates(f"rates {seq.rates} coincide within {RATE_COINCIDENCE:g} relative")
    r = np.asarray(seq.rates)
    terms = np.array([math.exp(-r[i] * t) / float(np.prod(np.delete(r, i) - r[i])) for i in range(len(r))])
    scale = float(np.prod(r[:-1]))
    value = scale * math.fsum(terms)
    magnitude = scale * float(np.abs(terms).sum())
    if not value > magnitude / MAX_CANCELLATION:
        raise DegenerateRates(f"partial fractions cancel: terms of size {magnitude:.3e} sum to {value:.3e}")
    return min(max(value, 0.0), 1.0)


def hypoexp_window_prob_expm(rates, t: float) -> float:
    """Same probability from the pure-birth sub-generator: entry (0, k) of exp(Qt)."""
    seq = _as_rates(rates)
    if t <= 0:
        return 1.0 if seq.k == 0 else 0.0
    r = np.asarray(seq.rates)
    n = len(r)
    q = np.diag(-r)
    q[np.arange(n - 1), np.arange(1, n)] = r[:-1]
    value = float(linalg.expm(q * t)[0, n - 1])
    return min(max(value, 0.0), 1.0)


def window_prob(rates, t: float) -> float:
    """Partial fractions when the rates are well separated, matrix exponential otherwise."""
    try:
        return hypoexp_window_prob(rates, t)
    except DegenerateRates as e:
        logger.debug(f"{e}; using the matrix exponential")
        return hypoexp_window_prob_expm(rates, t)


def _select_cell(tess: Tessellation, rng: np.random.Generator) -> Cell:
    ordered = tess.ordered_cells()
    masses = np.array([hit_mass(tess.measure, c) for _, c in ordered])
    cumulative = np.cumsum(masses)
    idx = min(int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right")), len(ordered) - 1)
    return ordered[idx][1]


@with_resample(max_retries=100)
def _chain_step(tess: Tessellation, step: int, rng: np.random.Generator) -> None:
    cell = _select_cell(tess, rng)
    h = sample_hitting(tess.measure, cell, rng)
    # Step indices stand in for jump times; the chain carries no time.
    tess.divide(cell.label, h, float(step + 1))


def sample_division_chain(window: Cell, m: HyperplaneMeasure, k: int,
                          rng: np.random.Generator) -> Tuple[Tessellation, RateSequence, TreeTuple]:
    """One path of the embedded chain: k divisions, each choosing a cell with
    probability mass/zeta and a hyperplane from that cell's hit distribution."""
    tess = initial(window, m)
    rates = [tess.zeta]
    genealogy = TreeTuple()
    for step in range(k):
        _chain_step(tess, step, rng)
        genealogy = extend(genealogy, tess.history[-1].divided_label)
        rates.append(tess.zeta)
    return tess, RateSequence(tuple(rates)), genealogy


def _check_request(k: int, n_samples: int) -> None:
    if k < 0 or k > MAX_K:
        raise OutOfRange(f"k must lie in 0..{MAX_K}, got {k}")
    if n_samples < MIN_SAMPLES:
        raise OutOfRange(f"n_samples must be at least {MIN_SAMPLES}, got {n_samples}")


def marginal_event_prob(window: Cell, m: HyperplaneMeasure, t: float, k: int,
                        event_predicate: Optional[Callable[[Tessellation], bool]],
                        n_samples: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Estimate P(#cells at t = k+1 and the tessellation satisfies the predicate).

    Returns (estimate, standard error). The estimator is unbiased because
    the window probability is an exact weight for each sampled chain.
    """
    _check_request(k, n_samples)
    if k == 0:
        tess = initial(window, m)
        weight = math.exp(-tess.zeta * t)
        if event_predicate is not None and not event_predicate(tess):
            weight = 0.0
        return weight, 0.0

    weights = np.empty(n_samples)
    for i in range(n_samples):
        tess, rates, _ = sample_division_chain(window, m, k, rng)
        weight = window_prob(rates, t)
        if event_predicate is not None and not event_predicate(tess):
            weight = 0.0
        weights[i] = weight
        m.clear_cache()
    estimate = float(weights.mean())
    std_error = float(weights.std(ddof=1) / math.sqrt(n_samples))
    logger.debug(f"k={k}: estimate {estimate:.6g} +- {std_error:.2g} from {n_samples} chains")
    return estimate, std_error


def marginal_count_prob(window: Cell, m: HyperplaneMeasure, t: float, k: int,
                        n_samples: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Estimate P(#cells at t = k+1)."""
    return marginal_event_prob(window, m, t, k, None, n_samples, rng)


def merge_estimates(parts: Sequence[Tuple[float, float, int]]) -> Tuple[float, float, int]:
    """Pool (estimate, std_error, n) triples of independent batches."""
    if len(parts) == 1:
        estimate, std_error, n = parts[0]
        return estimate, std_error, n
    n = sum(p[2] for p in parts)
    mean = sum(p[0] * p[2] for p in parts) / n
    # Within-batch sums of squares recovered from the standard errors.
    ss = sum((p[1] ** 2) * p[2] * (p[2] - 1) + p[2] * (p[0] - mean) ** 2 for p in parts)
    return mean, math.sqrt(ss / (n - 1) / n), n


def exhaustive_count_prob(window: Cell, m: HyperplaneMeasure, t: float, k: int,
                          nodes: int = 8) -> float:
    """P(#cells at t = k+1) summed over every genealogy with nested
    Gauss-Legendre quadrature over the cut positions (discrete theta only)."""
    if k > MAX_EXHAUSTIVE_K:
        raise TooLarge(f"exhaustive evaluation limited to k <= {MAX_EXHAUSTIVE_K}, got {k}")
    if m.uses_grid:
        raise ConfigError("theta", "exhaustive evaluation needs a discrete directional law")
    x, w = np.polynomial.legendre.leggauss(nodes)
    atoms = list(zip(m.directions, m.direction_weights))

    def integrate_path(tess: Tessellation, divided: List, depth: int, rates: List[float]) -> float:
        if depth == len(divided):
            return window_prob(rates, t)
        label = divided[depth]
        cell = tess.cells[label]
        z = tess.zeta
        total = 0.0
        for u, weight in atoms:
            lo, hi = projection_interval(cell, u)
            half, mid = (hi - lo) / 2.0, (hi + lo) / 2.0
            for xi, wi in zip(x, w):
                child = tess.copy()
                child.divide(label, Hyperplane(mid + half * xi, u), float(depth + 1))
                # Cell choice mass/zeta times hit density gamma*theta/mass.
                density = m.gamma * weight / z
                total += density * half * wi * integrate_path(child, divided, depth + 1, rates + [child.zeta])
        return total

    result = 0.0
    for r in enumerate_theta(k):
        divided = [r.entries[2 * l - 1].parent for l in range(1, k + 1)]
        start = initial(window, m)
        result += integrate_path(start, divided, 0, [start.zeta])
    m.clear_cache()
    return result


def expected_boundary_length(window: Cell, m: HyperplaneMeasure, t: float) -> float:
    """Mean total boundary length at time t (mean number of division points in 1D).

    Equal to the Poisson hyperplane value for intensity t * Lambda: gamma * t * volume(W).
    """
    return m.gamma * t * volume(window)
