"""Feature-difference analyses.

* intra-recording differences against electrode distance, summarised by a
  saturating fit ``f(d) = A * (1 - exp(-d / lambda))``
* same-location reapplication error between nearest pre/post electrodes
* same-channel inter-session residuals after removing the distance trend
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DegenerateSampleError, InsufficientOverlapError, UnfittableError
from .features import FEATURES
from .grid_geometry import grid_distance_matrix
from .stats import bootstrap_ci, quantile, wilcoxon_signed_rank

LAMBDA_STARTS = (0.5, 1.0, 2.0, 4.0, 8.0)
# binned RMS misfit as a fraction of the largest per-distance mean
GOOD_FIT_NRMSE = 0.1


def percent_difference(ref, other):
    """``100 * |other - ref| / |ref|``; NaN marks an excluded (zero-reference) pair."""
    ref = np.asarray(ref, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ref != 0, 100.0 * np.abs(other - ref) / np.abs(ref), np.nan)
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class PairDifferences:
    """Columnar set of (distance, percent difference) samples for one feature.

    ``ch_a`` is the reference (start) electrode; ``abs_diff`` keeps the raw
    absolute difference in feature units for volt-scale reporting.
    """

    feature: str
    distance_cm: np.ndarray
    abs_pct_diff: np.ndarray
    abs_diff: np.ndarray = None
    ch_a: np.ndarray = None
    ch_b: np.ndarray = None
    context: dict = field(default_factory=dict)
    n_excluded: int = 0

    def __len__(self):
        return len(self.distance_cm)

    @classmethod
    def concatenate(cls, parts, context=None):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")

        def cat(name):
            arrs = [getattr(p, name) for p in parts]
            return None if any(a is None for a in arrs) else np.concatenate(arrs)

        return cls(
            feature=parts[0].feature,
            distance_cm=cat("distance_cm"),
            abs_pct_diff=cat("abs_pct_diff"),
            abs_diff=cat("abs_diff"),
            ch_a=cat("ch_a"),
            ch_b=cat("ch_b"),
            context=dict(context or parts[0].context),
            n_excluded=sum(p.n_excluded for p in parts),
        )


def intra_pairwise(features, layout, mask=None, feature_names=FEATURES):
    """All ordered channel pairs of one recording, including self-pairs.

    Returns ``{feature: PairDifferences}``; 64 usable channels give 4096
    pairs per feature. Pairs whose reference value is zero are dropped and
    counted in ``n_excluded``.
    """
    ids = np.asarray(features.channel_ids)
    if mask is not None:
        keep = ~mask.open[ids]
        ids_idx = np.flatnonzero(keep)
    else:
        ids_idx = np.arange(len(ids))
    ids = ids[ids_idx]
    dist = grid_distance_matrix(layout)[np.ix_(ids, ids)].ravel()
    a = np.repeat(ids, len(ids))
    b = np.tile(ids, len(ids))
    out = {}
    for name in feature_names:
        v = np.asarray(features.values[name])[ids_idx]
        ref = np.repeat(v, len(v))
        oth = np.tile(v, len(v))
        pct = percent_difference(ref, oth)
        ok = np.isfinite(pct)
        out[name] = PairDifferences(
            feature=name,
            distance_cm=dist[ok],
            abs_pct_diff=pct[ok],
            abs_diff=np.abs(oth - ref)[ok],
            ch_a=a[ok],
            ch_b=b[ok],
            context=dict(features.metadata),
            n_excluded=int((~ok).sum()),
        )
    return out


def inverse_exponential(d, amplitude, length_scale):
    return amplitude * -np.expm1(-np.asarray(d, dtype=np.float64) / length_scale)


def _group_by_distance(d, y):
    key = np.round(d, 9)
    uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=y)
    means = sums / counts
    within = float(np.sum((y - means[inv]) ** 2))
    return uniq, means, counts, within


class InverseExponentialRegressor(RegressorMixin, BaseEstimator):
    """Bounded least-squares fit of ``y = A * (1 - exp(-d / lambda))``.

    The curve passes through the origin and is nondecreasing for ``A >= 0``.
    Each start value in ``lambda_starts`` seeds a trust-region refinement
    (with ``A`` initialised by linear least squares at that ``lambda``); the
    lowest residual sum of squares wins. Samples at zero distance carry no
    information about the curve and are dropped unless ``include_self``.

    Attributes
    ----------
    amplitude_, length_scale_ : float
        Fitted parameters (percent, cm).
    rss_ : float
        Residual sum of squares over the fitted samples.
    converged_ : bool
    amplitude_null_ : bool
        True when every target is zero; ``length_scale_`` then keeps its
        first start value.
    r2_binned_ : float
        Count-weighted R^2 of the curve against the per-distance means.
    nrmse_binned_ : float
        Count-weighted RMS gap between curve and per-distance means,
        relative to the largest per-distance mean. Unlike R^2 it stays
        meaningful for nearly flat curves.
    """

    def __init__(self, lambda_starts=LAMBDA_STARTS, include_self=False, lambda_bounds=(1e-3, 1e3)):
        self.lambda_starts = lambda_starts
        self.include_self = include_self
        self.lambda_bounds = lambda_bounds

    def fit(self, X, y):
        d = np.asarray(X, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if d.shape != y.shape:
            raise UnfittableError("distance and difference arrays differ in length")
        if not self.include_self:
            keep = d > 0
            d, y = d[keep], y[keep]
        uniq, means, counts, within = _group_by_distance(d, y) if len(d) else (np.array([]),) * 3 + (0.0,)
        if len(d) < 8 or len(uniq) < 3:
            raise UnfittableError(
                f"need >= 8 points over >= 3 distinct distances, got {len(d)} over {len(uniq)}"
            )
        self.n_points_ = len(d)
        if np.all(y == 0):
            self.amplitude_, self.length_scale_ = 0.0, float(self.lambda_starts[0])
            self.rss_, self.converged_, self.amplitude_null_ = 0.0, True, True
            self.r2_binned_, self.nrmse_binned_ = 1.0, 0.0
            return self

        w = np.sqrt(counts)

        def resid(p):
            return w * (inverse_exponential(uniq, p[0], p[1]) - means)

        def jac(p):
            e = np.exp(-uniq / p[1])
            return np.column_stack([w * (1 - e), w * (-p[0] * uniq * e / p[1] ** 2)])

        lo, hi = self.lambda_bounds
        best = None
        for lam0 in self.lambda_starts:
            g = -np.expm1(-uniq / lam0)
            a0 = max(float(np.sum(counts * g * means) / np.sum(counts * g * g)), 1e-12)
            sol = least_squares(
                resid, x0=[a0, lam0], jac=jac, bounds=([0.0, lo], [np.inf, hi]),
                method="trf", x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000,
            )
            rss = float(np.sum(sol.fun**2))
            if best is None or rss < best[0]:
                best = (rss, sol)
        rss, sol = best
        self.amplitude_, self.length_scale_ = float(sol.x[0]), float(sol.x[1])
        self.rss_ = rss + within
        self.converged_ = bool(sol.success)
        self.amplitude_null_ = self.amplitude_ == 0.0
        grand = np.sum(counts * means) / np.sum(counts)
        ss_tot = float(np.sum(counts * (means - grand) ** 2))
        self.r2_binned_ = 1.0 - rss / ss_tot if ss_tot > 0 else 1.0
        # observed level, not A: A runs away when lambda hits its bound
        scale = max(float(np.max(np.abs(means))), 1e-300)
        self.nrmse_binned_ = float(np.sqrt(rss / np.sum(counts)) / scale)
        return self

    def predict(self, X):
        check_is_fitted(self, "amplitude_")
        return inverse_exponential(np.asarray(X, dtype=np.float64).reshape(-1), self.amplitude_, self.length_scale_)


@dataclass(frozen=True)
class FitResult:
    amplitude_A: float
    length_scale_lambda: float
    rss: float
    n_points: int
    converged: bool
    amplitude_null: bool = False
    r2_binned: float = float("nan")
    nrmse_binned: float = float("nan")

    @property
    def good_fit(self):
        """RSS-based goodness flag: per-distance means sit close to the curve."""
        return self.converged and (self.amplitude_null or self.nrmse_binned <= GOOD_FIT_NRMSE)

    def predict(self, d):
        return inverse_exponential(d, self.amplitude_A, self.length_scale_lambda)


def fit_inverse_exponential(points, include_self=False, lambda_starts=LAMBDA_STARTS):
    """Fit the distance curve to a :class:`PairDifferences` set."""
    reg = InverseExponentialRegressor(lambda_starts=lambda_starts, include_self=include_self)
    reg.fit(points.distance_cm, points.abs_pct_diff)
    return FitResult(
        amplitude_A=reg.amplitude_,
        length_scale_lambda=reg.length_scale_,
        rss=reg.rss_,
        n_points=reg.n_points_,
        converged=reg.converged_,
        amplitude_null=reg.amplitude_null_,
        r2_binned=reg.r2_binned_,
        nrmse_binned=reg.nrmse_binned_,
    )


@dataclass(frozen=True, eq=False)
class SameLocationSummary:
    median_pct: float
    iqr: tuple
    n_pairs: int
    values: np.ndarray
    abs_values: np.ndarray
    separations: np.ndarray
    feature: str = ""
    n_excluded: int = 0

    @property
    def median_abs(self):
        return quantile(self.abs_values, 0.5)


def _matched_pairs(pre, post, cmap, max_sep_cm):
    """(pre channel, post channel, separation) for nearest pairs present in both feature sets."""
    pre_ids, post_ids = set(map(int, pre.channel_ids)), set(map(int, post.channel_ids))
    rows = []
    for a, (b, sep) in enumerate(zip(cmap.nearest, cmap.separation)):
        if sep <= max_sep_cm + 1e-12 and a in pre_ids and int(b) in post_ids:
            rows.append((a, int(b), float(sep)))
    return rows


def same_location_values(pre, post, cmap, feature, max_sep_cm=0.5):
    rows = _matched_pairs(pre, post, cmap, max_sep_cm)
    if not rows:
        return np.array([]), np.array([]), np.array([]), 0
    ref = np.array([pre.lookup(feature, a) for a, _, _ in rows])
    oth = np.array([post.lookup(feature, b) for _, b, _ in rows])
    seps = np.array([s for _, _, s in rows])
    pct = percent_difference(ref, oth)
    ok = np.isfinite(pct)
    return pct[ok], np.abs(oth - ref)[ok], seps[ok], int((~ok).sum())


def summarize_same_location(pct, abs_diff, seps, feature="", n_excluded=0):
    pct = np.asarray(pct, dtype=np.float64)
    if not len(pct):
        raise InsufficientOverlapError(f"{feature}: no nearest-electrode pairs within the separation limit")
    return SameLocationSummary(
        median_pct=quantile(pct, 0.5),
        iqr=(quantile(pct, 0.25), quantile(pct, 0.75)),
        n_pairs=len(pct),
        values=pct,
        abs_values=np.asarray(abs_diff, dtype=np.float64),
        separations=np.asarray(seps, dtype=np.float64),
        feature=feature,
        n_excluded=n_excluded,
    )


def same_location_summary(pre_features, post_features, cmap, feature, max_sep_cm=0.5):
    """Median/IQR of nearest-electrode percent differences pre vs post."""
    pct, absd, seps, n_ex = same_location_values(pre_features, post_features, cmap, feature, max_sep_cm)
    return summarize_same_location(pct, absd, seps, feature, n_ex)


@dataclass(frozen=True, eq=False)
class ResidualTest:
    residuals: np.ndarray
    distances: np.ndarray
    p_zero_median: float
    p_same_location_median: float
    same_location_median: float
    alpha: float = 0.05
    underpowered: bool = False
    feature: str = ""

    @property
    def median(self):
        return quantile(self.residuals, 0.5) if len(self.residuals) else float("nan")

    @property
    def consistent_with_zero(self):
        return self.p_zero_median >= self.alpha

    @property
    def consistent_with_same_location(self):
        return self.p_same_location_median >= self.alpha


def same_channel_values(pre, post, cmap, fit, feature, max_sep_cm=0.5):
    """Residuals ``pct(pre[ch], post[ch]) - f(d_ch)`` for channels of matched nearest pairs.

    ``d_ch`` is how far channel ``ch`` itself moved between placements.
    """
    rows = _matched_pairs(pre, post, cmap, max_sep_cm)
    channels = []
    for a, b, _ in rows:
        for ch in (a, b):
            if ch not in channels:
                channels.append(ch)
    pre_ids, post_ids = set(map(int, pre.channel_ids)), set(map(int, post.channel_ids))
    channels = [c for c in channels if c in pre_ids and c in post_ids]
    if not channels:
        return np.array([]), np.array([])
    moved = np.linalg.norm(cmap.post_positions - cmap.pre_positions, axis=1)
    d = moved[channels]
    pct = percent_difference(
        np.array([pre.lookup(feature, c) for c in channels]), np.array([post.lookup(feature, c) for c in channels])
    )
    ok = np.isfinite(pct)
    return pct[ok] - fit.predict(d[ok]), d[ok]


def _p_or_one(x):
    try:
        return wilcoxon_signed_rank(x).p_value
    except DegenerateSampleError:
        return 1.0


def residual_test(residuals, distances, sl_median, feature="", alpha=0.05):
    r = np.asarray(residuals, dtype=np.float64)
    under = len(r) < 5
    if under:
        warnings.warn(f"{feature}: only {len(r)} residuals; Wilcoxon test is underpowered", stacklevel=2)
    if not len(r):
        p0 = psl = float("nan")
    else:
        p0 = _p_or_one(r)
        psl = _p_or_one(r - sl_median)
    return ResidualTest(
        residuals=r, distances=np.asarray(distances, dtype=np.float64), p_zero_median=p0,
        p_same_location_median=psl, same_location_median=float(sl_median), alpha=alpha,
        underpowered=under, feature=feature,
    )


def same_channel_residuals(pre_features, post_features, cmap, fit, same_location, feature, max_sep_cm=0.5,
                           alpha=0.05):
    """Analysis of same-channel inter-session residuals.

    ``same_location`` is the :class:`SameLocationSummary` (or its median) of
    the same stratum. When every shifted residual is exactly zero the
    corresponding test has no evidence against its null and reports p = 1.
    """
    sl = same_location.median_pct if isinstance(same_location, SameLocationSummary) else float(same_location)
    r, d = same_channel_values(pre_features, post_features, cmap, fit, feature, max_sep_cm)
    return residual_test(r, d, sl, feature, alpha)


def _distance_groups(points):
    key = np.round(points.distance_cm, 9)
    uniq, inv = np.unique(key, return_inverse=True)
    return uniq, inv


def fraction_below(points, threshold_pct):
    """Per distinct distance, the fraction of differences strictly below ``threshold_pct``."""
    if threshold_pct < 0:
        raise ValueError("threshold must be >= 0")
    uniq, inv = _distance_groups(points)
    below = np.bincount(inv, weights=(points.abs_pct_diff < threshold_pct).astype(float), minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    return uniq, below / counts


def mean_curve_with_ci(points, confidence=0.95, n_resamples=2000, seed=0, values="pct"):
    """Per distinct distance: (distance, n, mean, lo, hi) with a percentile bootstrap CI.

    Each distance draws from its own child of ``SeedSequence(seed)``.
    Distances with a single sample get NaN bounds.
    """
    y = points.abs_pct_diff if values == "pct" else points.abs_diff
    uniq, inv = _distance_groups(points)
    order = np.argsort(inv, kind="stable")
    splits = np.split(y[order], np.cumsum(np.bincount(inv, minlength=len(uniq)))[:-1])
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    children = base.spawn(len(uniq))
    rows = []
    for dist, grp, child in zip(uniq, splits, children):
        m = float(np.mean(grp))
        if len(grp) >= 2:
            lo, hi = bootstrap_ci(grp, np.mean, confidence, n_resamples, child)
        else:
            lo = hi = math.nan
        rows.append((float(dist), len(grp), m, lo, hi))
    return rows
