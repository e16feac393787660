"""Nonparametric statistics used by the analyses."""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, InvalidConfigurationError, InvalidInputError

EXACT_MAX_N = 20


@dataclass(frozen=True)
class WilcoxonResult:
    statistic_W: float
    p_value: float
    n_effective: int
    method: str


def midranks(a):
    """Ranks 1..n of ``a`` with ties sharing the mean of their positions."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(len(a), dtype=np.float64)
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def _signed_rank_counts(doubled_ranks):
    """Number of sign patterns giving each value of 2*W+ (W+ = positive rank sum)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        counts[r:top + r + 1] = counts[r:top + r + 1] + counts[0:top + 1]
        top += r
    return counts


def _tail_counts(doubled_ranks, w2):
    counts = _signed_rank_counts(doubled_ranks)
    return int(sum(counts[:w2 + 1])), int(sum(counts[w2:]))


def two_sided_from_counts(n_le, n_ge, n):
    """Two-sided exact p = min(1, 2 * min(P(W+ <= w), P(W+ >= w)))."""
    return min(1.0, 2 * min(n_le, n_ge) / 2**n)


def wilcoxon_signed_rank(samples, mu0=0.0, alternative="two-sided", method="auto"):
    """Wilcoxon signed-rank test of ``median(samples) == mu0``.

    Zero differences are dropped and tied magnitudes get mid-ranks. With
    ``method="auto"`` the null distribution is enumerated exactly (all
    ``2**n`` sign patterns, counted by dynamic programming over the ranks)
    for ``n <= 20`` and approximated by a continuity- and tie-corrected
    normal distribution beyond that. The statistic is W+, the sum of the
    ranks of the positive differences.
    """
    if alternative != "two-sided":
        raise InvalidConfigurationError("only the two-sided alternative is implemented")
    if method not in ("auto", "exact", "approx"):
        raise InvalidConfigurationError(f"unknown method {method!r}")
    d = np.asarray(samples, dtype=np.float64).ravel() - mu0
    if not len(d):
        raise InvalidInputError("empty sample")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateSampleError("every difference from mu0 is zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        n_le, n_ge = _tail_counts(doubled, int(round(2 * w_plus)))
        return WilcoxonResult(w_plus, two_sided_from_counts(n_le, n_ge, n), n, "exact")
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return WilcoxonResult(w_plus, 1.0, n, "normal-approx")
    z = max(abs(w_plus - mu) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(w_plus, p, n, "normal-approx")


def quantile(samples, q):
    """Linear-interpolation quantile (the 'type 7' definition)."""
    a = np.asarray(samples, dtype=np.float64).ravel()
    if not len(a):
        raise InvalidInputError("quantile of an empty sample")
    if not 0 <= q <= 1:
        raise InvalidInputError(f"q must lie in [0, 1], got {q}")
    return float(np.quantile(a, q, method="linear"))


def median(samples):
    return quantile(samples, 0.5)


def derive_seed(seed, *key):
    """Independent child seed for ``key`` (any strings/ints), stable across runs and threads."""
    digest = hashlib.sha256(repr(tuple(str(k) for k in key)).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(seed), *words])


def bootstrap_ci(samples, statistic=np.mean, confidence=0.95, n_resamples=2000, seed=0):
    """Percentile bootstrap interval for ``statistic``.

    ``statistic`` must accept an array and an ``axis`` keyword and reduce
    along that axis, as numpy reductions do. ``seed`` may be an int or a
    :class:`numpy.random.SeedSequence`.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not len(x):
        raise InvalidInputError("bootstrap of an empty sample")
    if n_resamples < 100:
        raise InvalidConfigurationError("n_resamples must be >= 100")
    if not 0 < confidence < 1:
        raise InvalidConfigurationError(f"confidence must lie in (0, 1), got {confidence}")
    rng = np.random.default_rng(seed)
    chunk = max(1, min(n_resamples, 4_000_000 // len(x)))
    stats = np.empty(n_resamples)
    done = 0
    while done < n_resamples:
        m = min(chunk, n_resamples - done)
        idx = rng.integers(0, len(x), size=(m, len(x)))
        stats[done:done + m] = statistic(x[idx], axis=1)
        done += m
    alpha = 1.0 - confidence
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)
