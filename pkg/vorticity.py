"""Non-resonance condition on vortex strengths.

For a subset I of the vortices S(I) = sum_{i != j in I} G_i G_j
= (sum_I G_i)^2 - sum_I G_i^2. The condition holds when S(I) != 0 for every
subset with at least two elements; the zero set of some S(I) is the resonant
variety.
"""
import logging
from typing import Iterator, List, Tuple

import numpy as np

from errors import CapacityError, InvalidInputError
from schemas import GammaCheck

logger = logging.getLogger(__name__)

MAX_VORTICES = 24
TABLE_BITS = 16
DEFAULT_TOL = 1e-12


def as_gammas(gammas) -> np.ndarray:
    g = np.asarray(gammas, dtype=float).reshape(-1)
    if g.size < 2:
        raise InvalidInputError(f"need at least two vortex strengths, got {g.size}")
    if np.any(g == 0) or not np.all(np.isfinite(g)):
        raise InvalidInputError("vortex strengths must be finite and nonzero")
    if g.size > MAX_VORTICES:
        raise CapacityError(f"subset enumeration is limited to N <= {MAX_VORTICES}, got {g.size}")
    return g


def _table(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sums, sums of squares and sizes of all 2^k subsets; mask bit i selects g[i]."""
    sums = np.zeros(1)
    squares = np.zeros(1)
    sizes = np.zeros(1, dtype=np.int64)
    for x in g:
        sums = np.concatenate([sums, sums + x])
        squares = np.concatenate([squares, squares + x * x])
        sizes = np.concatenate([sizes, sizes + 1])
    return sums, squares, sizes


def subset_values(gammas) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """Yield (mask offset, S(I), |I|) blocks covering every subset in mask order."""
    g = as_gammas(gammas)
    low = g[:TABLE_BITS]
    high = g[TABLE_BITS:]
    ls, lq, ln = _table(low)
    hs, hq, hn = _table(high)
    for h in range(hs.size):
        total = ls + hs[h]
        yield h << low.size, total * total - (lq + hq[h]), ln + hn[h]


def _worst(gammas) -> Tuple[int, float]:
    best_mask, best_value = -1, np.inf
    for offset, values, sizes in subset_values(gammas):
        cand = np.where(sizes >= 2, np.abs(values), np.inf)
        k = int(np.argmin(cand))
        if cand[k] < abs(best_value):
            best_mask, best_value = offset + k, float(values[k])
    return best_mask, best_value


def _mask_to_subset(mask: int, n: int) -> List[int]:
    return [i + 1 for i in range(n) if mask >> i & 1]


def variety_distance(gammas) -> float:
    """min over |I| >= 2 of |S(I)| / sum G_i^2; zero exactly on the resonant variety."""
    g = as_gammas(gammas)
    _, worst = _worst(g)
    return abs(worst) / float(np.sum(g * g))


def gamma_condition(gammas, tol: float = DEFAULT_TOL) -> GammaCheck:
    g = as_gammas(gammas)
    if not tol >= 0:
        raise InvalidInputError(f"tolerance must be nonnegative, got {tol}")
    mask, worst = _worst(g)
    scale = float(np.sum(g * g))
    passed = abs(worst) > tol * scale
    subset = _mask_to_subset(mask, g.size)
    logger.debug("gamma condition: passed=%s worst subset=%s S=%.3g", passed, subset, worst)
    return GammaCheck(passed=passed, worst_subset=subset, worst_value=worst,
                      margin=abs(worst) / scale, tolerance=tol)


def subset_condition(gammas, subset) -> float:
    """S(I) for an explicit subset of 0-based indices."""
    g = np.asarray(gammas, dtype=float)[list(subset)]
    return float(np.sum(g) ** 2 - np.sum(g * g))


def sinh_poisson_gammas(m: int, n: int, tau: float) -> Tuple[np.ndarray, List[float]]:
    """Strengths (1, ..., 1, -1/tau, ..., -1/tau) with m positive entries, and
    every tau > 0 at which some subset sum S(I) vanishes.

    A subset with a positive and b negative entries has
    S = (b^2 - b) x^2 - 2 a b x + (a^2 - a) with x = 1/tau.
    """
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    if not 0 <= m <= n:
        raise InvalidInputError(f"need 0 <= m <= n, got m={m}, n={n}")
    if n < 2:
        raise InvalidInputError(f"need at least two vortices, got n={n}")
    gammas = np.concatenate([np.ones(m), -np.ones(n - m) / tau])
    roots = []
    for a in range(m + 1):
        for b in range(n - m + 1):
            if a + b < 2:
                continue
            qa, qb, qc = float(b * b - b), float(-2 * a * b), float(a * a - a)
            if qa == 0.0:
                cand = [-qc / qb] if qb != 0.0 else []
            else:
                disc = qb * qb - 4.0 * qa * qc
                cand = [] if disc < 0 else [(-qb + sgn * np.sqrt(disc)) / (2.0 * qa) for sgn in (1.0, -1.0)]
            roots.extend(1.0 / x for x in cand if x > 0)
    taus: List[float] = []
    for t in sorted(roots):
        if not taus or abs(t - taus[-1]) > 1e-12 * max(1.0, t):
            taus.append(float(t))
    return gammas, taus
