"""Nonparametric tests and box-plot summaries.

Implements the Brunner-Munzel two-sample test (midranks, studentized
statistic, t approximation with Satterthwaite degrees of freedom), the
Wilcoxon signed-rank test (zeros dropped, midranks for ties, exact
two-sided p for small n via the full sign-assignment distribution, normal
approximation with tie and continuity corrections otherwise), Bonferroni
adjustment, and linear-interpolation quantile summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

EXACT_CUTOFF = 15  # largest n for which the 2^n sign distribution is enumerated


class DegenerateStatisticError(ValueError):
    """Rank statistics have zero variance (e.g. complete separation)."""


class NoEffectError(ValueError):
    """All paired differences are zero; there is nothing to test."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "exact" | "approximate"
    n: tuple[int, ...]
    alpha: float = 0.05
    p_hat: float | None = None  # Brunner-Munzel stochastic superiority P(X<Y)+0.5*P(X=Y)

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p_value out of range: {self.p_value}")

    @property
    def significant(self) -> bool:
        return self.p_value < self.alpha


@dataclass(frozen=True)
class BoxSummary:
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float


def brunner_munzel(x, y, alpha: float = 0.05) -> TestResult:
    """Two-sided Brunner-Munzel test of P(X<Y) + 0.5*P(X=Y) = 0.5.

    Returns the studentized statistic, a t-approximation p-value, and the
    estimated superiority probability ``p_hat``. Raises
    :class:`DegenerateStatisticError` when the rank variances are both zero,
    which happens exactly under complete separation of the samples.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise ValueError("brunner_munzel requires at least 2 values per sample")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("brunner_munzel requires finite inputs")

    combined = scipy_stats.rankdata(np.concatenate([x, y]))
    rank_x, rank_y = combined[:nx], combined[nx:]
    within_x = scipy_stats.rankdata(x)
    within_y = scipy_stats.rankdata(y)
    mean_rx = rank_x.mean()
    mean_ry = rank_y.mean()

    p_hat = (mean_ry - (ny + 1) / 2.0) / nx

    s2_x = np.square(rank_x - within_x - mean_rx + (nx + 1) / 2.0).sum() / (nx - 1)
    s2_y = np.square(rank_y - within_y - mean_ry + (ny + 1) / 2.0).sum() / (ny - 1)
    pooled = nx * s2_x + ny * s2_y
    if pooled <= 0.0:
        raise DegenerateStatisticError(
            "zero variance in rank statistics (complete separation of the samples)"
        )

    statistic = nx * ny * (mean_ry - mean_rx) / ((nx + ny) * math.sqrt(pooled))
    df = pooled**2 / ((nx * s2_x) ** 2 / (nx - 1) + (ny * s2_y) ** 2 / (ny - 1))
    p_value = min(1.0, 2.0 * float(scipy_stats.t.sf(abs(statistic), df)))
    return TestResult(
        statistic=float(statistic),
        p_value=p_value,
        method="approximate",
        n=(nx, ny),
        alpha=alpha,
        p_hat=float(p_hat),
    )


def _signed_rank_distribution(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of 2*W+ over all sign assignments, by subset-sum convolution.

    Midranks are all multiples of 0.5, so doubling makes them integers and
    the distribution support becomes 0..sum(doubled_ranks).
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(
    differences, alpha: float = 0.05, method: str = "auto"
) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped (classic Wilcoxon convention) and tied
    magnitudes get midranks. The statistic is W+, the sum of ranks of the
    positive differences. ``method`` is ``auto`` (exact for n <= 15),
    ``exact``, or ``approx``.
    """
    d = np.asarray(differences, dtype=float)
    if not np.isfinite(d).all():
        raise ValueError("differences must be finite")
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise NoEffectError("all differences are zero")

    ranks = scipy_stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if method == "auto":
        method = "exact" if n <= EXACT_CUTOFF else "approx"
    if method == "exact":
        doubled = np.rint(2.0 * ranks).astype(int)
        counts = _signed_rank_distribution(doubled)
        total = 2.0**n
        w2 = int(round(2.0 * w_plus))
        p_le = counts[: w2 + 1].sum() / total
        p_ge = counts[w2:].sum() / total
        p_value = min(1.0, 2.0 * min(p_le, p_ge))
        label = "exact"
    elif method == "approx":
        mean_w = n * (n + 1) / 4.0
        # Tie correction subtracts sum(t^3 - t)/48 from the null variance.
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(
            ((tie_counts**3 - tie_counts).sum()) / 48.0
        )
        if variance <= 0.0:
            raise DegenerateStatisticError("zero variance in signed-rank statistic")
        delta = w_plus - mean_w
        # Continuity correction: pull the statistic 0.5 toward the mean.
        z = (delta - 0.5 * np.sign(delta)) / math.sqrt(variance)
        p_value = min(1.0, 2.0 * float(scipy_stats.norm.sf(abs(z))))
        label = "approximate"
    else:
        raise ValueError(f"unknown method {method!r}")

    return TestResult(
        statistic=w_plus, p_value=p_value, method=label, n=(n,), alpha=alpha
    )


def bonferroni(p_values, m: int) -> list[float]:
    """Bonferroni adjustment: p -> min(1, p*m) for m planned comparisons."""
    p_values = list(p_values)
    if m < 1:
        raise ValueError("comparison count m must be >= 1")
    if m < len(p_values):
        raise ValueError(f"m={m} is smaller than the {len(p_values)} supplied p-values")
    return [min(1.0, float(p) * m) for p in p_values]


def box_summary(values) -> BoxSummary:
    """Five-number summary plus mean, quartiles by linear interpolation."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("box_summary requires at least one value")
    if not np.isfinite(arr).all():
        raise ValueError("box_summary requires finite values")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return BoxSummary(
        n=int(arr.size),
        min=float(arr.min()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(arr.max()),
        mean=float(arr.mean()),
    )
