"""Rank tests, effect sizes, and one-sided stochastic dominance bootstrap tests.

The dominance test asks whether one sample's distribution first-order
stochastically dominates another's: F_a(x) <= F_b(x) everywhere. The test
statistic is the scaled supremum of the empirical CDF difference over the
pooled support, and its null distribution is approximated by resampling
both pseudo-samples from the pooled data (the least-favorable configuration
F_a = F_b). Every bootstrap replicate draws from its own seed-derived
substream, so serial and parallel runs produce bit-identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
import numpy as np
from scipy.stats import rankdata

EXACT_THRESHOLD = 8  # per-side sample size cap for exact U enumeration
ALTERNATIVES = ("two-sided", "a-greater", "a-less")
HYPOTHESES = ("a-dominates-b", "b-dominates-a")


class UndefinedEffectError(ValueError):
    """Cohen's d undefined because the pooled standard deviation is zero."""


@dataclass(frozen=True)
class Sample:
    """A labelled sample of finite scalar observations."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("sample must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"sample {self.label!r} contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step CDF: F(x) = #(values <= x) / n."""

    support: np.ndarray  # sorted unique observed values
    heights: np.ndarray  # cumulative probability at each support point

    def __call__(self, x) -> np.ndarray | float:
        idx = np.searchsorted(self.support, np.asarray(x, dtype=np.float64), side="right")
        padded = np.concatenate(([0.0], self.heights))
        out = padded[idx]
        return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float  # U of the first sample
    p_value: float
    alternative: str
    method: str  # 'exact' or 'normal-approx'
    n_a: int
    n_b: int
    degenerate: bool = False


@dataclass(frozen=True)
class EffectSize:
    cohens_d: float
    pooled_sd: float


@dataclass(frozen=True)
class FosdResult:
    statistic: float
    p_value: float
    bootstrap_iterations: int
    hypothesis: str  # 'a-dominates-b' or 'b-dominates-a'
    seed: int
    n_a: int
    n_b: int
    label_a: str = ""
    label_b: str = ""
    degenerate: bool = False


def empirical_cdf(s: Sample) -> EmpiricalCdf:
    support, counts = np.unique(s.values, return_counts=True)
    heights = np.cumsum(counts) / s.n
    heights[-1] = 1.0  # guard against accumulated rounding
    return EmpiricalCdf(support=support, heights=heights)


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """U of sample a, from midranks: U_a = R_a - n_a(n_a+1)/2."""
    n_a = a.size
    ranks = rankdata(np.concatenate([a, b]), method="average")
    return float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)


def _exact_u_pvalue(pooled_n: int, n_a: int, u_obs: float, alternative: str) -> float:
    """Exact p by enumerating all C(n, n_a) assignments of ranks to sample a.

    Valid only for tie-free pooled samples, where the rank vector is a
    permutation of 1..n and every assignment is equally likely under H0.
    """
    le = 0  # assignments with U* <= u_obs
    ge = 0  # assignments with U* >= u_obs
    total = 0
    offset = n_a * (n_a + 1) / 2.0
    tol = 1e-9
    for combo in combinations(range(1, pooled_n + 1), n_a):
        u = sum(combo) - offset
        if u <= u_obs + tol:
            le += 1
        if u >= u_obs - tol:
            ge += 1
        total += 1
    if alternative == "a-less":
        return le / total
    if alternative == "a-greater":
        return ge / total
    return min(1.0, 2.0 * min(le, ge) / total)


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _normal_u_pvalue(
    a: np.ndarray, b: np.ndarray, u_obs: float, alternative: str
) -> tuple[float, bool]:
    """Tie-corrected normal approximation with 0.5 continuity correction."""
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    pooled = np.concatenate([a, b])
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        # Every pooled value identical: no ordering information.
        return 1.0, True
    sd = math.sqrt(var)
    mu = n_a * n_b / 2.0
    if alternative == "a-greater":
        p = _normal_sf((u_obs - mu - 0.5) / sd)
    elif alternative == "a-less":
        p = 1.0 - _normal_sf((u_obs - mu + 0.5) / sd)
    else:
        p = 2.0 * _normal_sf((abs(u_obs - mu) - 0.5) / sd)
    return min(1.0, max(0.0, p)), False


def mann_whitney(
    a: Sample,
    b: Sample,
    alternative: str = "two-sided",
    method: str = "auto",
    exact_threshold: int = EXACT_THRESHOLD,
) -> UTestResult:
    """Mann-Whitney U test with midrank tie handling.

    The exact p-value enumerates every assignment of pooled ranks when both
    samples have at most ``exact_threshold`` observations and the pooled
    sample is tie-free; otherwise a tie-corrected normal approximation with
    continuity correction is used. ``method`` may force either branch
    ('exact' requires the tie-free/small-sample conditions to hold).
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"unknown alternative {alternative!r}")
    if method not in ("auto", "exact", "normal-approx"):
        raise ValueError(f"unknown method {method!r}")
    av, bv = a.values, b.values
    u_obs = _u_statistic(av, bv)
    pooled = np.concatenate([av, bv])
    has_ties = np.unique(pooled).size < pooled.size
    small = av.size <= exact_threshold and bv.size <= exact_threshold
    if method == "exact" and (has_ties or not small):
        raise ValueError("exact method requires tie-free samples with both n <= threshold")
    use_exact = (method == "exact") or (method == "auto" and small and not has_ties)
    if use_exact:
        p = _exact_u_pvalue(pooled.size, av.size, u_obs, alternative)
        return UTestResult(u_obs, p, alternative, "exact", av.size, bv.size)
    p, degenerate = _normal_u_pvalue(av, bv, u_obs, alternative)
    return UTestResult(u_obs, p, alternative, "normal-approx", av.size, bv.size, degenerate)


def cohens_d(a: Sample, b: Sample) -> EffectSize:
    """Standardized mean difference with the pooled sample standard deviation."""
    if a.n < 2 or b.n < 2:
        raise ValueError("cohens_d requires at least 2 observations per sample")
    var_a = float(np.var(a.values, ddof=1))
    var_b = float(np.var(b.values, ddof=1))
    pooled = math.sqrt(((a.n - 1) * var_a + (b.n - 1) * var_b) / (a.n + b.n - 2))
    if pooled == 0.0:
        raise UndefinedEffectError("pooled standard deviation is zero")
    d = (float(np.mean(a.values)) - float(np.mean(b.values))) / pooled
    return EffectSize(cohens_d=d, pooled_sd=pooled)


def _sup_cdf_difference(
    sorted_hi: np.ndarray, sorted_lo: np.ndarray, grid: np.ndarray
) -> float:
    """sup over the grid of F_hi(x) - F_lo(x) for two sorted samples.

    Exact for step CDFs whenever the grid contains every jump point of F_hi.
    """
    f_hi = np.searchsorted(sorted_hi, grid, side="right") / sorted_hi.size
    f_lo = np.searchsorted(sorted_lo, grid, side="right") / sorted_lo.size
    return float(np.max(f_hi - f_lo))


def fosd_statistic(a: Sample, b: Sample, hypothesis: str = "a-dominates-b") -> float:
    """Scaled sup of the empirical CDF difference over the pooled support.

    Under H0 'a dominates b' (F_a <= F_b everywhere) the difference
    F_a - F_b should be non-positive, so large positive values are evidence
    against dominance.
    """
    if hypothesis not in HYPOTHESES:
        raise ValueError(f"unknown hypothesis {hypothesis!r}")
    scale = math.sqrt(a.n * b.n / (a.n + b.n))
    grid = np.unique(np.concatenate([a.values, b.values]))
    sa, sb = np.sort(a.values), np.sort(b.values)
    if hypothesis == "a-dominates-b":
        return scale * _sup_cdf_difference(sa, sb, grid)
    return scale * _sup_cdf_difference(sb, sa, grid)


def _bootstrap_statistics(
    positions: np.ndarray,
    grid_size: int,
    n_a: int,
    n_b: int,
    seed: int,
    start: int,
    stop: int,
    out: np.ndarray,
) -> None:
    """Fill out[start:stop] with pooled-resampling replicate statistics.

    ``positions`` maps each pooled observation to its index in the sorted
    unique grid, so a replicate's CDFs reduce to bincount + cumsum. Each
    replicate i draws only from the (seed, i) substream.
    """
    n = n_a + n_b
    scale = math.sqrt(n_a * n_b / n)
    for i in range(start, stop):
        rng = np.random.default_rng((seed, i))
        draw = positions[rng.integers(0, n, size=n)]
        f_a = np.cumsum(np.bincount(draw[:n_a], minlength=grid_size)) / n_a
        f_b = np.cumsum(np.bincount(draw[n_a:], minlength=grid_size)) / n_b
        out[i] = scale * float(np.max(f_a - f_b))


def fosd_test(
    a: Sample,
    b: Sample,
    iterations: int = 1000,
    seed: int = 0,
    hypothesis: str = "a-dominates-b",
    threads: int = 1,
) -> FosdResult:
    """One-sided test of first-order stochastic dominance.

    H0 for 'a-dominates-b' is F_a(x) <= F_b(x) for all x. The p-value is the
    fraction of pooled-resampling bootstrap replicates whose statistic meets
    or exceeds the observed one. Fixed seed implies a bit-identical result
    for any thread count.
    """
    if hypothesis not in HYPOTHESES:
        raise ValueError(f"unknown hypothesis {hypothesis!r}")
    if iterations < 100:
        raise ValueError(f"need at least 100 bootstrap iterations, got {iterations}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    t_obs = fosd_statistic(a, b, hypothesis)
    # The bootstrap null is symmetric in direction, so replicates always use
    # the first-over-second orientation with sizes matched to the hypothesis.
    if hypothesis == "a-dominates-b":
        n_first, n_second = a.n, b.n
    else:
        n_first, n_second = b.n, a.n
    pooled = np.concatenate([a.values, b.values])
    grid = np.unique(pooled)
    degenerate = grid.size == 1
    positions = np.searchsorted(grid, pooled)
    stats = np.empty(iterations, dtype=np.float64)
    if threads <= 1:
        _bootstrap_statistics(positions, grid.size, n_first, n_second, seed, 0, iterations, stats)
    else:
        bounds = np.linspace(0, iterations, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(
                    _bootstrap_statistics,
                    positions, grid.size, n_first, n_second, seed,
                    int(bounds[t]), int(bounds[t + 1]), stats,
                )
                for t in range(threads)
            ]
            for f in futures:
                f.result()
    p = float(np.count_nonzero(stats >= t_obs)) / iterations
    return FosdResult(
        statistic=t_obs,
        p_value=p,
        bootstrap_iterations=iterations,
        hypothesis=hypothesis,
        seed=seed,
        n_a=a.n,
        n_b=b.n,
        label_a=a.label,
        label_b=b.label,
        degenerate=degenerate,
    )
