"""Descriptor extraction: hand values, invariants, and the brute-force oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaopt.errors import (
    EmptySeries,
    InsufficientLength,
    NonPositivePeriod,
    SingularDesign,
    ZeroVariance,
)
from metaopt.series_stats import (
    ACF_LAGS,
    acf,
    adf_test,
    decompose_strengths,
    default_adf_lag_order,
    extract_meta_features,
    outlier_ratio,
    pacf,
    summarize,
)

from reference_stats import full_vector

NA = float("nan")


def close(a, b, rel=1e-9, abs_tol=1e-12):
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=rel, abs_tol=abs_tol)


class TestHandValues:
    def test_acf_lag1(self):
        assert acf([1, 2, 3, 4, 5], [1])[1] == pytest.approx(0.4, abs=1e-12)

    def test_acf_lag2(self):
        assert acf([1, 2, 3, 4, 5], [2])[2] == pytest.approx(-0.1, abs=1e-12)

    def test_acf_lag0_is_one(self):
        assert acf([3, 1, 4, 1, 5], [0])[0] == 1.0

    def test_acf_short_lag_is_na(self):
        assert acf([1, 2, 3], [5])[5] is None

    def test_acf_constant_raises(self):
        with pytest.raises(ZeroVariance):
            acf([2, 2, 2, 2], [1])

    def test_pacf_lag1_equals_acf_lag1(self):
        series = [1.0, 2.5, 1.5, 4.0, 3.0, 5.5, 2.0]
        assert pacf(series, [1])[1] == pytest.approx(acf(series, [1])[1], abs=1e-15)

    def test_pacf_lag2_closed_form(self):
        # (rho2 - rho1^2) / (1 - rho1^2) = (-0.1 - 0.16) / 0.84
        assert pacf([1, 2, 3, 4, 5], [2])[2] == pytest.approx(-0.26 / 0.84, abs=1e-12)

    def test_pacf_constant_raises(self):
        with pytest.raises(ZeroVariance):
            pacf([7, 7, 7, 7], [1])

    def test_outlier_ratio_with_spike(self):
        assert outlier_ratio([1, 2, 3, 4, 100]) == pytest.approx(0.2)

    def test_outlier_ratio_clean(self):
        assert outlier_ratio([1, 2, 3, 4, 5]) == 0.0

    def test_outlier_ratio_constant(self):
        assert outlier_ratio([3, 3, 3]) == 0.0

    def test_outlier_ratio_empty(self):
        with pytest.raises(EmptySeries):
            outlier_ratio([NA, NA])


class TestExtractExamples:
    def test_constant_series_conventions(self):
        v = extract_meta_features([5, 5, 5, 5, 5], seasonal_period=2)
        assert v.mean == 5 and v.std == 0 and v.variance == 0 and v.range == 0
        assert v.skewness == 0 and v.kurtosis == 0
        assert v.outlier_ratio == 0 and v.zero_ratio == 0
        assert all(val is None for val in v.acf.values())

    def test_ramp_moments(self):
        v = extract_meta_features([1, 2, 3, 4, 5], seasonal_period=2)
        assert v.mean == 3
        assert v.std == pytest.approx(math.sqrt(2.5))
        assert (v.min, v.q25, v.median, v.q75, v.max) == (1, 2, 3, 4, 5)
        assert v.range == 4 and v.iqr == 2
        assert v.trend_strength == pytest.approx(1.0)

    def test_alternating_series_counts(self):
        v = extract_meta_features([0, 1, 0, 1, 0], seasonal_period=2)
        assert v.num_peaks == 2 and v.num_troughs == 1
        assert v.zero_ratio == pytest.approx(0.6)

    def test_all_na_raises(self):
        with pytest.raises(EmptySeries):
            extract_meta_features([NA, NA, NA], seasonal_period=2)

    def test_bad_period_raises(self):
        with pytest.raises(NonPositivePeriod):
            extract_meta_features([1, 2, 3], seasonal_period=1)

    def test_missing_and_count(self):
        v = extract_meta_features([1, NA, 2, NA, 3], seasonal_period=2)
        assert v.count == 3 and v.missing == 2


class TestAdf:
    def test_mean_reverting_is_stationary(self):
        rng = np.random.default_rng(42)
        e = rng.normal(size=200)
        x = np.zeros(200)
        for i in range(1, 200):
            x[i] = -0.9 * x[i - 1] + e[i]
        stat, p = adf_test(x, default_adf_lag_order(200))
        assert p < 0.05

    def test_random_walk_is_not(self):
        rng = np.random.default_rng(43)
        x = np.cumsum(rng.normal(size=200))
        stat, p = adf_test(x, default_adf_lag_order(200))
        assert p > 0.10

    def test_deterministic_ramp_is_singular(self):
        with pytest.raises(SingularDesign):
            adf_test(np.arange(50, dtype=float), 0)

    def test_too_short(self):
        with pytest.raises(InsufficientLength):
            adf_test([1.0, 2.0, 1.5], 2)

    def test_matches_reference_package(self):
        statsmodels = pytest.importorskip("statsmodels.tsa.stattools")
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            x = rng.normal(size=150) + 0.5 * np.sin(np.arange(150) / 5.0)
            p = default_adf_lag_order(150)
            stat, pval = adf_test(x, p)
            ref = statsmodels.adfuller(x, maxlag=p, regression="ct", autolag=None)
            assert stat == pytest.approx(ref[0], abs=1e-6)
            assert pval == pytest.approx(ref[1], abs=1e-6)


class TestDecomposition:
    def test_pure_seasonal(self):
        t = np.arange(120)
        trend, seasonal, resid = decompose_strengths(np.sin(2 * np.pi * t / 12), 12)
        assert seasonal >= 0.95 and trend <= 0.05

    def test_pure_trend(self):
        trend, seasonal, resid = decompose_strengths(np.arange(120, dtype=float), 12)
        assert trend >= 0.95

    def test_constant_raises(self):
        with pytest.raises(ZeroVariance):
            decompose_strengths(np.ones(50), 12)

    def test_too_short_raises(self):
        with pytest.raises(InsufficientLength):
            decompose_strengths(np.arange(20, dtype=float), 12)

    def test_odd_period(self):
        t = np.arange(105)
        trend, seasonal, resid = decompose_strengths(np.sin(2 * np.pi * t / 7), 7)
        assert seasonal >= 0.9


class TestSummarize:
    def test_stationary_label(self):
        v = extract_meta_features(np.sin(np.arange(60) * 2.0), seasonal_period=2)
        v.adf_pvalue = 0.01
        assert summarize(v).stationarity == "stationary"

    def test_strong_dependence_label(self):
        v = extract_meta_features([1, 2, 3, 4, 5, 6], seasonal_period=2)
        v.acf = {1: 0.85, 3: -0.85, 6: 0.85, 12: None, 24: None}
        s = summarize(v)
        assert s.temporal_dependence == "strong"

    def test_moderate_boundary(self):
        v = extract_meta_features([1, 2, 3, 4, 5, 6], seasonal_period=2)
        v.acf = {1: 0.3, 3: None, 6: None, 12: None, 24: None}
        assert summarize(v).temporal_dependence == "moderate"

    def test_degraded_vector_labels(self):
        v = extract_meta_features([1, 1, 2], seasonal_period=2)
        v.acf = {k: None for k in ACF_LAGS}
        v.adf_pvalue = None
        v.trend_strength_decomp = None
        v.seasonal_strength_decomp = None
        v.residual_strength = None
        v.coef_of_variation = None
        v.outlier_ratio = None
        s = summarize(v)
        assert s.temporal_dependence == "inconclusive"
        assert s.stationarity == "inconclusive"
        assert s.trend == "none" and s.seasonality == "none"
        assert s.noise_level == "inconclusive"
        assert s.narrative == []

    def test_deterministic(self):
        v = extract_meta_features(np.sin(np.arange(100) / 3.0), seasonal_period=12)
        assert summarize(v) == summarize(v)

    def test_noise_vote(self):
        v = extract_meta_features([1, 2, 3, 4, 5, 6], seasonal_period=2)
        v.coef_of_variation = 2.0   # vote
        v.residual_strength = 0.5   # vote
        v.outlier_ratio = 0.0       # no vote
        assert summarize(v).noise_level == "high"
        v.residual_strength = 0.1
        assert summarize(v).noise_level == "medium"
        v.coef_of_variation = 0.2
        assert summarize(v).noise_level == "low"


def _series_strategy():
    return st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=32),
        min_size=4,
        max_size=80,
    )


class TestProperties:
    @given(_series_strategy())
    @settings(max_examples=60, deadline=None)
    def test_quartile_ordering_and_identities(self, series):
        v = extract_meta_features(series, seasonal_period=4)
        assert v.min <= v.q25 <= v.median <= v.q75 <= v.max
        assert close(v.range, v.max - v.min)
        assert close(v.iqr, v.q75 - v.q25)
        if v.std is not None:
            assert math.isclose(v.variance, v.std ** 2, rel_tol=1e-9, abs_tol=1e-12)
        assert 0.0 <= v.zero_ratio <= 1.0
        assert 0.0 <= v.outlier_ratio <= 1.0
        assert v.num_peaks + v.num_troughs <= max(0, len(series) - 2)

    @given(_series_strategy())
    @settings(max_examples=60, deadline=None)
    def test_acf_bounded(self, series):
        try:
            values = acf(series, ACF_LAGS)
        except ZeroVariance:
            return
        for lag, value in values.items():
            if value is not None:
                assert abs(value) <= 1.0 + 1e-12

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_pacf1_equals_acf1(self, seed):
        rng = np.random.default_rng(seed)
        series = rng.normal(size=30)
        assert pacf(series, [1])[1] == acf(series, [1])[1]

    @given(st.integers(0, 2 ** 31 - 1),
           st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
           st.floats(min_value=1e-3, max_value=1e3, allow_nan=False))
    @settings(max_examples=25, deadline=None)
    def test_shift_and_scale_invariances(self, seed, shift, scale):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=60)
        lag_order = 2
        a1 = acf(x, [1, 3])
        a2 = acf(x + shift, [1, 3])
        a3 = acf(x * scale, [1, 3])
        for lag in (1, 3):
            assert a1[lag] == pytest.approx(a2[lag], rel=1e-7, abs=1e-7)
            assert a1[lag] == pytest.approx(a3[lag], rel=1e-7, abs=1e-7)
        s1, _ = adf_test(x, lag_order)
        s2, _ = adf_test(x + shift, lag_order)
        s3, _ = adf_test(x * scale, lag_order)
        assert s1 == pytest.approx(s2, rel=1e-6, abs=1e-6)
        assert s1 == pytest.approx(s3, rel=1e-6, abs=1e-6)
        v1 = extract_meta_features(x, 4)
        v2 = extract_meta_features(x + shift, 4)
        v3 = extract_meta_features(x * scale, 4)
        assert v1.trend_strength == pytest.approx(v2.trend_strength, rel=1e-6, abs=1e-9)
        if v1.coef_of_variation is not None and v3.coef_of_variation is not None:
            assert v1.coef_of_variation == pytest.approx(v3.coef_of_variation, rel=1e-6)
        assert v1.skewness == pytest.approx(v3.skewness, rel=1e-6, abs=1e-9)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_na_positions_do_not_matter_for_moments(self, seed):
        rng = np.random.default_rng(seed)
        values = list(rng.normal(size=12))
        a = values[:4] + [NA] + values[4:] + [NA]
        b = [NA] + values[:7] + [NA] + values[7:]
        va = extract_meta_features(a, seasonal_period=3)
        vb = extract_meta_features(b, seasonal_period=3)
        for field in ("count", "missing", "mean", "std", "min", "q25", "median",
                      "q75", "max", "skewness", "kurtosis", "zero_ratio",
                      "outlier_ratio", "num_peaks", "num_troughs"):
            assert getattr(va, field) == getattr(vb, field)


def _oracle_series(seed: int, n: int) -> np.ndarray:
    """Varied but well-conditioned generators for the oracle comparison."""
    rng = np.random.default_rng(seed)
    kind = seed % 5
    t = np.arange(n)
    if kind == 0:
        x = rng.normal(size=n)
    elif kind == 1:
        x = np.zeros(n)
        for i in range(1, n):
            x[i] = 0.6 * x[i - 1] + rng.normal()
    elif kind == 2:
        x = 0.05 * t + 2.0 * np.sin(2 * np.pi * t / 12) + rng.normal(size=n)
    elif kind == 3:
        x = rng.normal(size=n)
        x[rng.integers(0, n, size=max(1, n // 20))] = 0.0
        x[rng.integers(0, n, size=max(1, n // 30))] += 25.0
    else:
        x = np.zeros(n)
        for i in range(2, n):
            x[i] = 0.9 * x[i - 1] - 0.4 * x[i - 2] + rng.normal()
    return x


class TestOracleEquivalence:
    def test_fifty_seeded_series(self):
        checked = 0
        scalar_fields = (
            "count", "missing", "mean", "std", "min", "q25", "median", "q75",
            "max", "range", "iqr", "variance", "skewness", "kurtosis",
            "coef_of_variation", "trend_strength", "nonlinearity_proxy",
            "trend_strength_decomp", "seasonal_strength_decomp",
            "residual_strength", "num_peaks", "num_troughs", "zero_ratio",
            "outlier_ratio",
        )
        for i in range(50):
            n = (30, 120, 500)[i % 3]
            x = _oracle_series(1000 + i, n)
            mine = extract_meta_features(x, seasonal_period=12)
            ref = full_vector(list(x), seasonal_period=12)
            for field in scalar_fields:
                got = getattr(mine, field)
                want = ref[field]
                assert close(got, want), (i, field, got, want)
            for lag in ACF_LAGS:
                assert close(mine.acf[lag], ref["acf"][lag]), (i, "acf", lag)
                assert close(mine.pacf[lag], ref["pacf"][lag], rel=1e-9, abs_tol=1e-9), (
                    i, "pacf", lag, mine.pacf[lag], ref["pacf"][lag],
                )
            checked += 1
        assert checked == 50
