import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdsemg_shift import _oracles as oracle
from hdsemg_shift.analysis import (
    GOOD_FIT_NRMSE,
    InverseExponentialRegressor,
    PairDifferences,
    fit_inverse_exponential,
    fraction_below,
    intra_pairwise,
    inverse_exponential,
    mean_curve_with_ci,
    percent_difference,
    residual_test,
    same_channel_residuals,
    same_location_summary,
)
from hdsemg_shift.errors import InsufficientOverlapError, UnfittableError
from hdsemg_shift.features import AMPLITUDE_FEATURES, FEATURES, FREQUENCY_FEATURES, FeatureSet
from hdsemg_shift.grid_geometry import GridLayout, ShiftTransform, closest_channel_map, electrode_positions
from hdsemg_shift.recording import ChannelMask

LAYOUT = GridLayout()


def feature_set(values=None, ids=None, seed=0):
    ids = np.arange(64) if ids is None else np.asarray(ids)
    rng = np.random.default_rng(seed)
    vals = values or {k: rng.uniform(1, 2, len(ids)) * (100 if k in FREQUENCY_FEATURES else 1e-3) for k in FEATURES}
    return FeatureSet(ids, {k: np.asarray(v, dtype=float) for k, v in vals.items()}, 3)


def points(d, y, feature="mnf"):
    d = np.asarray(d, dtype=float)
    return PairDifferences(feature, d, np.asarray(y, dtype=float), abs_diff=np.asarray(y, dtype=float))


class TestPercentDifference:
    def test_examples(self):
        assert percent_difference(10, 10) == 0
        assert percent_difference(10, 15) == 50
        assert percent_difference(15, 10) == pytest.approx(33.333333, rel=1e-6)

    def test_zero_reference_excluded(self):
        assert math.isnan(percent_difference(0, 3))

    @settings(max_examples=60, deadline=None)
    @given(r=st.floats(1e-3, 1e3), o=st.floats(0, 1e3), a=st.sampled_from([2.0**k for k in range(-20, 21)]))
    def test_scale_free(self, r, o, a):
        # power-of-two scaling is exact in binary floating point, so equality is bitwise
        assert percent_difference(a * r, a * o) == percent_difference(r, o)

    @settings(max_examples=60, deadline=None)
    @given(r=st.floats(1e-3, 1e3), o=st.floats(0, 1e3), a=st.floats(1e-6, 1e6))
    def test_scale_free_any_factor(self, r, o, a):
        assert percent_difference(a * r, a * o) == pytest.approx(percent_difference(r, o), rel=1e-12, abs=1e-9)


class TestIntraPairwise:
    def test_full_grid(self):
        pairs = intra_pairwise(feature_set(), LAYOUT)
        assert all(len(pairs[k]) == 4096 for k in FEATURES)
        self_pairs = pairs["mnf"].distance_cm == 0
        assert self_pairs.sum() == 64
        assert np.all(pairs["mnf"].abs_pct_diff[self_pairs] == 0)

    def test_one_masked(self):
        mask = ChannelMask(np.arange(64) == 17)
        assert len(intra_pairwise(feature_set(), LAYOUT, mask)["iemg"]) == 63**2

    def test_constant_features(self):
        fs = feature_set({k: np.full(64, 3.0) for k in FEATURES})
        assert np.all(intra_pairwise(fs, LAYOUT)["max_env"].abs_pct_diff == 0)

    def test_zero_reference_counted(self):
        vals = {k: np.linspace(1, 2, 64) for k in FEATURES}
        vals["iemg"][5] = 0.0
        pairs = intra_pairwise(feature_set(vals), LAYOUT)["iemg"]
        # channel 5 as reference (64 pairs, one of them the self-pair) drops out
        assert pairs.n_excluded == 64
        assert len(pairs) == 4096 - 64

    def test_directional(self):
        vals = {k: np.r_[10.0, 15.0, np.ones(62)] for k in FEATURES}
        p = intra_pairwise(feature_set(vals), LAYOUT)["mdf"]
        ab = p.abs_pct_diff[(p.ch_a == 0) & (p.ch_b == 1)][0]
        ba = p.abs_pct_diff[(p.ch_a == 1) & (p.ch_b == 0)][0]
        assert (ab, ba) == pytest.approx((50.0, 100 / 3))


class TestFit:
    d = np.repeat(np.linspace(0.5, 9, 18), 20)

    def test_exact_curve(self):
        fit = fit_inverse_exponential(points(self.d, inverse_exponential(self.d, 50, 2)))
        assert fit.amplitude_A == pytest.approx(50, rel=1e-6)
        assert fit.length_scale_lambda == pytest.approx(2, rel=1e-6)
        assert fit.rss == pytest.approx(0, abs=1e-12)
        assert fit.converged and fit.good_fit

    def test_all_zero(self):
        fit = fit_inverse_exponential(points(self.d, np.zeros_like(self.d)))
        assert fit.amplitude_A == 0 and fit.converged and fit.amplitude_null
        assert fit.length_scale_lambda == 0.5
        assert fit.good_fit

    def test_single_distance(self):
        with pytest.raises(UnfittableError):
            fit_inverse_exponential(points(np.full(50, 2.0), np.ones(50)))

    def test_too_few_points(self):
        with pytest.raises(UnfittableError):
            fit_inverse_exponential(points([1, 2, 3, 4], [1, 2, 3, 4]))

    def test_self_pairs_excluded_by_default(self):
        d = np.r_[np.zeros(64), self.d]
        y = np.r_[np.zeros(64), inverse_exponential(self.d, 30, 1.5)]
        fit = fit_inverse_exponential(points(d, y))
        assert fit.n_points == len(self.d)
        assert fit_inverse_exponential(points(d, y), include_self=True).n_points == len(d)

    def test_noisy_recovery_against_grid_oracle(self):
        rng = np.random.default_rng(11)
        lattice = np.linalg.norm(LAYOUT.nominal_positions()[:, None] - LAYOUT.nominal_positions()[None], axis=2)
        d = lattice.ravel()
        hits, trials = 0, 40
        for _ in range(trials):
            y = inverse_exponential(d, 50, 2) + rng.normal(0, 2.0, d.shape)
            fit = fit_inverse_exponential(points(d, y))
            hits += abs(fit.amplitude_A - 50) <= 2.5 and abs(fit.length_scale_lambda - 2) <= 0.2
            keep = d > 0
            ga, gl, grss = oracle.grid_search_inverse_exponential(
                d[keep], y[keep], np.linspace(40, 60, 801), np.linspace(1.5, 2.5, 401))
            assert fit.amplitude_A == pytest.approx(ga, abs=0.05)
            assert fit.length_scale_lambda == pytest.approx(gl, abs=0.005)
            assert fit.rss <= grss * (1 + 1e-9)
        assert hits >= 0.95 * trials

    def test_goodness_flag_catches_wrong_shape(self):
        d = self.d
        y = np.where(d < 5, 0.0, 40.0)
        fit = fit_inverse_exponential(points(d, y))
        assert fit.nrmse_binned > GOOD_FIT_NRMSE
        assert not fit.good_fit

    def test_sklearn_protocol(self):
        reg = InverseExponentialRegressor().fit(self.d[:, None], inverse_exponential(self.d, 10, 3))
        np.testing.assert_allclose(reg.predict([[0.0], [3.0]]), [0, 10 * (1 - math.exp(-1))], rtol=1e-6)
        assert reg.get_params()["include_self"] is False

    @settings(max_examples=30, deadline=None)
    @given(A=st.floats(0.1, 100), lam=st.floats(0.2, 8), seed=st.integers(0, 2**16))
    def test_origin_and_monotone(self, A, lam, seed):
        rng = np.random.default_rng(seed)
        y = np.abs(inverse_exponential(self.d, A, lam) + rng.normal(0, 1, self.d.shape))
        fit = fit_inverse_exponential(points(self.d, y))
        grid = np.linspace(0, 20, 200)
        f = fit.predict(grid)
        assert f[0] == 0
        assert np.all(np.diff(f) >= -1e-12)
        assert fit.amplitude_A >= 0 and fit.length_scale_lambda > 0


class TestSameLocation:
    def cmap(self, shift=ShiftTransform()):
        return closest_channel_map(LAYOUT.nominal_positions(), electrode_positions(LAYOUT, shift))

    def test_identical(self):
        fs = feature_set()
        sl = same_location_summary(fs, fs, self.cmap(), "iemg")
        assert sl.median_pct == 0 and sl.n_pairs == 64

    def test_uniform_gain(self):
        pre = feature_set()
        post = pre.scaled(1.2)
        for k in AMPLITUDE_FEATURES:
            expected = 44.0 if k == "total_power" else 20.0
            assert same_location_summary(pre, post, self.cmap(), k).median_pct == pytest.approx(expected)
        for k in FREQUENCY_FEATURES:
            assert same_location_summary(pre, post, self.cmap(), k).median_pct == 0

    def test_gain_jitter_matches_analytic_median(self):
        rng = np.random.default_rng(2)
        meds = []
        for _ in range(50):
            pre = feature_set(seed=int(rng.integers(1 << 30)))
            g = rng.uniform(0.9, 1.1, 64)
            post = FeatureSet(pre.channel_ids, {k: v * g for k, v in pre.values.items()}, 3)
            meds.append(same_location_summary(pre, post, self.cmap(), "max_env").median_pct)
        # |g - 1| is uniform on [0, 0.1], so the median percent difference is 5
        assert np.mean(meds) == pytest.approx(5.0, abs=0.3)

    def test_iqr_ordering(self):
        pre, post = feature_set(seed=1), feature_set(seed=2)
        sl = same_location_summary(pre, post, self.cmap(), "mdf")
        assert sl.iqr[0] <= sl.median_pct <= sl.iqr[1]

    def test_large_shift_has_no_overlap(self):
        fs = feature_set()
        with pytest.raises(InsufficientOverlapError):
            same_location_summary(fs, fs, self.cmap(ShiftTransform(0.5, 0.5, 0)), "mdf", max_sep_cm=0.5)


class TestResiduals:
    def test_identical_zero_shift(self):
        fs = feature_set()
        cmap = closest_channel_map(LAYOUT.nominal_positions(), LAYOUT.nominal_positions())
        fit = fit_inverse_exponential(points(TestFit.d, inverse_exponential(TestFit.d, 20, 2)))
        sl = same_location_summary(fs, fs, cmap, "mnf")
        rt = same_channel_residuals(fs, fs, cmap, fit, sl, "mnf")
        assert np.all(rt.residuals == 0)
        assert rt.consistent_with_zero and rt.p_zero_median == 1.0

    def test_residuals_at_same_location_median(self):
        rt = residual_test(np.full(8, 4.0), np.zeros(8), 4.0)
        assert rt.consistent_with_same_location
        assert not rt.consistent_with_zero
        assert rt.p_zero_median == pytest.approx(oracle.signed_rank_p_bruteforce(np.full(8, 4.0)))

    def test_underpowered_warning(self):
        with pytest.warns(UserWarning):
            rt = residual_test([1.0, -0.5, 2.0], [0.1, 0.1, 0.2], 0.0)
        assert rt.underpowered and 0 <= rt.p_zero_median <= 1

    def test_residual_is_pct_minus_fit(self):
        pre = feature_set(seed=4)
        post = FeatureSet(pre.channel_ids, {k: v * 1.1 for k, v in pre.values.items()}, 3)
        shift = ShiftTransform(0.3, 0.0, 0.0)
        cmap = closest_channel_map(LAYOUT.nominal_positions(), electrode_positions(LAYOUT, shift))
        fit = fit_inverse_exponential(points(TestFit.d, inverse_exponential(TestFit.d, 20, 2)))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rt = same_channel_residuals(pre, post, cmap, fit, 10.0, "iemg")
        np.testing.assert_allclose(rt.distances, 0.3)
        np.testing.assert_allclose(rt.residuals, 10.0 - inverse_exponential(0.3, 20, 2))


class TestFractionBelow:
    def test_infinite_threshold(self):
        _, frac = fraction_below(points([0, 1, 1, 2], [0, 5, 7, 9]), 1e9)
        assert np.all(frac == 1)

    def test_zero_threshold(self):
        d, frac = fraction_below(points([0, 0, 1, 2], [0, 0, 5, 0]), 0.0)
        assert d.tolist() == [0, 1, 2] and frac.tolist() == [0, 0, 0]

    def test_strict_inequality(self):
        _, frac = fraction_below(points([1, 1], [3.0, 2.0]), 3.0)
        assert frac.tolist() == [0.5]

    def test_monotone_for_growing_diffs(self, rng):
        d = np.repeat(np.arange(1, 10.0), 100)
        y = d * 3 + rng.uniform(0, 5, d.shape)
        _, frac = fraction_below(points(d, y), 15.0)
        assert np.all(np.diff(frac) <= 0)

    @settings(max_examples=50, deadline=None)
    @given(y=st.lists(st.floats(0, 100), min_size=1, max_size=40), t1=st.floats(0, 120), t2=st.floats(0, 120))
    def test_nonincreasing_in_threshold(self, y, t1, t2):
        lo, hi = sorted((t1, t2))
        d = np.arange(len(y)) % 3
        p = points(d, y)
        assert np.all(fraction_below(p, lo)[1] <= fraction_below(p, hi)[1])


class TestMeanCurve:
    def test_constant_zero_width(self):
        rows = mean_curve_with_ci(points([1, 1, 1], [7, 7, 7]))
        assert rows == [(1.0, 3, 7.0, 7.0, 7.0)]

    def test_two_point_mean(self):
        assert mean_curve_with_ci(points([2, 2], [0, 10]))[0][2] == 5.0

    def test_normal_width(self):
        y = np.random.default_rng(5).normal(50, 5, 200)
        (_, n, m, lo, hi), = mean_curve_with_ci(points(np.full(200, 3.0), y), seed=1)
        assert (hi - lo) == pytest.approx(2 * 1.96 * 5 / math.sqrt(200), rel=0.15)

    def test_singleton_has_nan_bounds(self):
        (_, n, m, lo, hi), = mean_curve_with_ci(points([4], [1.0]))
        assert n == 1 and math.isnan(lo) and math.isnan(hi)

    def test_seeded(self, rng):
        p = points(np.repeat([1.0, 2.0], 30), rng.normal(size=60))
        assert mean_curve_with_ci(p, seed=3) == mean_curve_with_ci(p, seed=3)
        assert mean_curve_with_ci(p, seed=3) != mean_curve_with_ci(p, seed=4)
