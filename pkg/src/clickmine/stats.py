"""Shared statistical kernel: quantiles, ECDF, rank-sum and proportion tests.

Everything here is a pure function of its arguments.  The rank-sum test
switches to exhaustive enumeration for small samples (combined n <= 16,
where the full subset walk is cheap) and otherwise uses the normal
approximation with tie and continuity corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Sequence

__all__ = [
    "TestMethod",
    "TestResult",
    "Ecdf",
    "quantile",
    "quartiles",
    "wrs_test",
    "two_prop_test",
    "wilson_interval",
    "ecdf",
]

# Combined sample size at or below which wrs_test enumerates exactly.
EXACT_WRS_LIMIT = 16

# Combined sample size at or below which two_prop_test enumerates exactly.
# The normal approximation drifts far from any exact test at single-digit
# class sizes, so the proportion test gets the same cheap-exact crossover
# the rank-sum test uses.
EXACT_TWO_PROP_LIMIT = 20

# Two-sided 95% standard-normal critical value, used by the Wilson interval.
Z_95 = 1.959963984540054


class TestMethod(str, Enum):
    WRS_NORMAL = "wrs_normal"
    WRS_EXACT = "wrs_exact"
    TWO_PROP_Z = "two_prop_z"
    TWO_PROP_EXACT = "two_prop_exact"


@dataclass(frozen=True)
class TestResult:
    """Outcome of a hypothesis test."""

    statistic: float
    p_value: float
    method: TestMethod
    ci: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        if self.ci is not None and self.ci[0] > self.ci[1]:
            raise ValueError(f"inverted confidence interval {self.ci}")


def _norm_sf(x: float) -> float:
    """Standard normal survival function 1 - Phi(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _clamp_p(p: float) -> float:
    return min(1.0, max(0.0, p))


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile between closest order statistics.

    This is the common "type 7" estimator: position h = (n-1)*q on the
    sorted sample, interpolated between floor(h) and ceil(h).
    """
    if not values:
        raise ValueError("cannot take a quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level {q} outside [0, 1]")
    xs = sorted(values)
    h = (len(xs) - 1) * q
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return float(xs[lo])
    return float(xs[lo] + (h - lo) * (xs[hi] - xs[lo]))


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """(Q1, Q2, Q3) of a sample via the type-7 rule."""
    return (quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75))


def _fractional_ranks(values: Sequence[float]) -> list[float]:
    """Midranks: ties share the mean of the ranks they occupy."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def _wrs_exact(ranks: list[float], n_a: int) -> tuple[float, float]:
    """Exact two-sided p by enumerating every assignment of ranks to group a.

    The statistic is the rank sum W of group a; the p-value is the fraction
    of the C(n, n_a) equally likely assignments whose |W - E[W]| is at least
    as large as observed.  Works with midranks, so ties are handled by
    conditioning on the observed rank multiset.
    """
    n = len(ranks)
    w_obs = sum(ranks[:n_a])
    mu = n_a * (n + 1) / 2.0
    dev_obs = abs(w_obs - mu)
    hits = 0
    total = 0
    for subset in combinations(range(n), n_a):
        w = sum(ranks[i] for i in subset)
        if abs(w - mu) >= dev_obs - 1e-9:
            hits += 1
        total += 1
    return w_obs, hits / total


def _wrs_normal(ranks: list[float], n_a: int) -> tuple[float, float]:
    """Two-sided normal approximation with tie and continuity corrections."""
    n = len(ranks)
    n_b = n - n_a
    w = sum(ranks[:n_a])
    mu = n_a * (n + 1) / 2.0

    # Tie correction on the rank variance.
    counts: dict[float, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tie_term = sum(c**3 - c for c in counts.values())
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        # All observations tied: no evidence of a difference.
        return w, 1.0
    dev = abs(w - mu)
    z = max(0.0, dev - 0.5) / math.sqrt(var)
    return w, _clamp_p(2.0 * _norm_sf(z))


def wrs_test(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Two-sided Wilcoxon rank-sum test for a distribution difference.

    Exact enumeration when len(a) + len(b) <= 16, normal approximation with
    continuity and tie corrections otherwise.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("wrs_test requires non-empty samples")
    values = list(a) + list(b)
    ranks = _fractional_ranks(values)
    if len(values) <= EXACT_WRS_LIMIT:
        stat, p = _wrs_exact(ranks, len(a))
        method = TestMethod.WRS_EXACT
    else:
        stat, p = _wrs_normal(ranks, len(a))
        method = TestMethod.WRS_NORMAL
    return TestResult(statistic=stat, p_value=_clamp_p(p), method=method)


def wilson_interval(successes: int, total: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Never collapses to a point at 0 or 1, which keeps the derived midpoint
    estimates away from the boundaries for extreme counts.
    """
    if total <= 0:
        raise ValueError("wilson_interval requires total >= 1")
    if not 0 <= successes <= total:
        raise ValueError("successes must lie in [0, total]")
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total))
    return (max(0.0, center - half), min(1.0, center + half))


def _two_prop_exact(x1: int, n1: int, x0: int, n0: int) -> float:
    """Exact two-sided p for a proportion difference by full enumeration.

    Enumerates every outcome pair under independent binomials with the
    pooled success probability, counting outcomes whose absolute proportion
    difference is at least the observed one.
    """
    pooled = (x1 + x0) / (n1 + n0)
    if pooled in (0.0, 1.0):
        return 1.0
    d_obs = abs(x1 / n1 - x0 / n0)
    p_a = [math.comb(n1, a) * pooled**a * (1.0 - pooled) ** (n1 - a) for a in range(n1 + 1)]
    p_b = [math.comb(n0, b) * pooled**b * (1.0 - pooled) ** (n0 - b) for b in range(n0 + 1)]
    total = 0.0
    for a in range(n1 + 1):
        for b in range(n0 + 1):
            if abs(a / n1 - b / n0) >= d_obs - 1e-12:
                total += p_a[a] * p_b[b]
    return total


def two_prop_test(x1: int, n1: int, x0: int, n0: int) -> TestResult:
    """Two-sided pooled test for H0: p1 = p0.

    Small samples (combined n <= 20) are handled by exact enumeration under
    the pooled null; larger ones by the classic pooled z-test.  The attached
    confidence interval is the 95% Wilson interval for the share of group-1
    members among all x1 + x0 successes (the quantity whose midpoint serves
    as the success estimate downstream).
    """
    if n1 < 1 or n0 < 1:
        raise ValueError("two_prop_test requires n1, n0 >= 1")
    if not (0 <= x1 <= n1 and 0 <= x0 <= n0):
        raise ValueError("counts must satisfy 0 <= x <= n")
    p1 = x1 / n1
    p0 = x0 / n0
    pooled = (x1 + x0) / (n1 + n0)
    ci = wilson_interval(x1, x1 + x0) if (x1 + x0) > 0 else (0.0, 1.0)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n0))
    z = 0.0 if se == 0.0 else abs(p1 - p0) / se
    if n1 + n0 <= EXACT_TWO_PROP_LIMIT:
        return TestResult(z, _clamp_p(_two_prop_exact(x1, n1, x0, n0)), TestMethod.TWO_PROP_EXACT, ci)
    if se == 0.0:
        return TestResult(0.0, 1.0, TestMethod.TWO_PROP_Z, ci)
    return TestResult(z, _clamp_p(2.0 * _norm_sf(z)), TestMethod.TWO_PROP_Z, ci)


class Ecdf:
    """Right-continuous empirical CDF of a sample."""

    def __init__(self, values: Sequence[float]) -> None:
        if not values:
            raise ValueError("ecdf requires a non-empty sample")
        xs = sorted(values)
        n = len(xs)
        self.xs: list[float] = []
        self.ps: list[float] = []
        for i, x in enumerate(xs):
            if i + 1 < n and xs[i + 1] == x:
                continue
            self.xs.append(float(x))
            self.ps.append((i + 1) / n)

    def __call__(self, x: float) -> float:
        """P(X <= x)."""
        lo, hi = 0, len(self.xs)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.xs[mid] <= x:
                lo = mid + 1
            else:
                hi = mid
        return 0.0 if lo == 0 else self.ps[lo - 1]

    def steps(self) -> list[tuple[float, float]]:
        return list(zip(self.xs, self.ps))


def ecdf(values: Sequence[float]) -> Ecdf:
    """Build the empirical CDF step function of a sample."""
    return Ecdf(values)
