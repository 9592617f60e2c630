"""Per-feature descriptors of a time series and their semantic summary.

Each variable of a dataset is condensed into a fixed vector of statistical,
temporal and quality descriptors plus a handful of human-readable labels.
Both feed the optimization prompt, so field names and label wording are part
of the prompt contract and must stay stable.

Missing-data policy: moment statistics drop NAs and work on the retained
observations; autocorrelation, the unit-root test and the decomposition run
on the longest contiguous NA-free stretch. Fields that cannot be computed
are None, never a sentinel number.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .adf_pvalues import adf_pvalue_ct
from .errors import (
    EmptySeries,
    InsufficientLength,
    NonPositivePeriod,
    SingularDesign,
    ZeroVariance,
)

ACF_LAGS = (1, 3, 6, 12, 24)

# Label thresholds. Fixed constants so the summary is deterministic and testable.
DEPENDENCE_WEAK_BELOW = 0.3
DEPENDENCE_MODERATE_BELOW = 0.6
STATIONARY_PVALUE_BELOW = 0.05
STRENGTH_NONE_BELOW = 0.3
STRENGTH_MILD_BELOW = 0.6
NOISE_CV_ABOVE = 1.0
NOISE_RESIDUAL_ABOVE = 0.4
NOISE_OUTLIER_ABOVE = 0.05

_RECURSION_EPS = 1e-12


@dataclass
class MetaFeatureVector:
    """Full descriptor set for one series. None marks a non-computable field."""

    count: int
    missing: int
    mean: float | None
    std: float | None
    min: float | None
    q25: float | None
    median: float | None
    q75: float | None
    max: float | None
    range: float | None
    iqr: float | None
    variance: float | None
    skewness: float | None
    kurtosis: float | None
    coef_of_variation: float | None
    trend_strength: float | None
    adf_stat: float | None
    adf_pvalue: float | None
    nonlinearity_proxy: float | None
    trend_strength_decomp: float | None
    seasonal_strength_decomp: float | None
    residual_strength: float | None
    acf: dict[int, float | None]
    pacf: dict[int, float | None]
    num_peaks: int | None
    num_troughs: int | None
    zero_ratio: float | None
    outlier_ratio: float | None

    def to_json_dict(self) -> dict:
        """Field order and names here are the serialization contract."""
        return {
            "count": self.count,
            "missing": self.missing,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "q25": self.q25,
            "median": self.median,
            "q75": self.q75,
            "max": self.max,
            "range": self.range,
            "iqr": self.iqr,
            "variance": self.variance,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "coef_of_variation": self.coef_of_variation,
            "trend_strength": self.trend_strength,
            "adf_stat": self.adf_stat,
            "adf_pvalue": self.adf_pvalue,
            "nonlinearity_proxy": self.nonlinearity_proxy,
            "trend_strength_decomp": self.trend_strength_decomp,
            "seasonal_strength_decomp": self.seasonal_strength_decomp,
            "residual_strength": self.residual_strength,
            "acf": {str(k): v for k, v in self.acf.items()},
            "pacf": {str(k): v for k, v in self.pacf.items()},
            "num_peaks": self.num_peaks,
            "num_troughs": self.num_troughs,
            "zero_ratio": self.zero_ratio,
            "outlier_ratio": self.outlier_ratio,
        }


@dataclass
class MetaSummary:
    """Semantic labels derived deterministically from a MetaFeatureVector."""

    temporal_dependence: str
    stationarity: str
    trend: str
    seasonality: str
    noise_level: str
    narrative: list[str]

    def to_json_dict(self) -> dict:
        return {
            "temporal_dependence": self.temporal_dependence,
            "stationarity": self.stationarity,
            "trend": self.trend,
            "seasonality": self.seasonality,
            "noise_level": self.noise_level,
            "narrative": list(self.narrative),
        }


def _as_float_array(series) -> np.ndarray:
    arr = np.asarray(
        [np.nan if v is None else float(v) for v in series], dtype=float
    )
    return arr


def _observed(x: np.ndarray) -> np.ndarray:
    return x[np.isfinite(x)]


def _longest_run(x: np.ndarray) -> np.ndarray:
    """Longest contiguous stretch without NAs; first one wins ties."""
    mask = np.isfinite(x)
    if not mask.any():
        raise EmptySeries("all observations are NA")
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(np.int8), [0]))))
    starts, ends = edges[0::2], edges[1::2]
    k = int(np.argmax(ends - starts))
    return x[starts[k]:ends[k]]


def _quantile(sorted_x: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics (the common convention)."""
    n = len(sorted_x)
    if n == 1:
        return float(sorted_x[0])
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_x[lo] * (1 - frac) + sorted_x[hi] * frac)


def acf(series, lags) -> dict[int, float | None]:
    """Sample autocorrelation with a single global mean and full-sample denominator.

    rho_k = sum_{t=k+1..T} (x_t - xbar)(x_{t-k} - xbar) / sum_t (x_t - xbar)^2.
    Lags the series is too short for come back as None; a constant series has
    no defined autocorrelation at all and raises ZeroVariance.
    """
    x = _longest_run(_as_float_array(series))
    n = len(x)
    mean = float(np.mean(x))
    centered = x - mean
    denom = float(np.sum(centered ** 2))
    if denom == 0.0:
        raise ZeroVariance("constant series has undefined autocorrelation")
    out: dict[int, float | None] = {}
    for lag in sorted(set(int(k) for k in lags)):
        if lag < 0:
            raise ValueError(f"negative lag {lag}")
        if lag == 0:
            out[0] = 1.0
        elif n >= lag + 1:
            num = float(np.sum(centered[lag:] * centered[:-lag]))
            out[lag] = num / denom
        else:
            out[lag] = None
    return out


def pacf(series, lags) -> dict[int, float | None]:
    """Partial autocorrelations phi_kk via the Levinson-Durbin recursion.

    Built on the sample autocorrelations up to the largest requested lag.
    A numerically singular recursion step yields None for that lag and all
    deeper ones (the recursion cannot continue past it).
    """
    lag_list = sorted(set(int(k) for k in lags))
    if any(k < 0 for k in lag_list):
        raise ValueError("negative lag")
    max_lag = max(lag_list) if lag_list else 0
    rho_map = acf(series, range(0, max_lag + 1))
    out: dict[int, float | None] = {}
    if 0 in lag_list:
        out[0] = 1.0
    available = max(k for k in rho_map if rho_map[k] is not None)
    rho = [rho_map[k] for k in range(0, available + 1)]

    phi_prev: list[float] = []
    phi_kk_by_lag: dict[int, float | None] = {}
    dead = False
    for k in range(1, available + 1):
        if dead:
            phi_kk_by_lag[k] = None
            continue
        if k == 1:
            phi_kk = rho[1]
            phi_prev = [phi_kk]
        else:
            num = rho[k] - sum(phi_prev[j] * rho[k - 1 - j] for j in range(k - 1))
            den = 1.0 - sum(phi_prev[j] * rho[j + 1] for j in range(k - 1))
            if abs(den) < _RECURSION_EPS:
                phi_kk_by_lag[k] = None
                dead = True
                continue
            phi_kk = num / den
            phi_prev = [
                phi_prev[j] - phi_kk * phi_prev[k - 2 - j] for j in range(k - 1)
            ] + [phi_kk]
        phi_kk_by_lag[k] = phi_kk

    for lag in lag_list:
        if lag == 0:
            continue
        out[lag] = phi_kk_by_lag.get(lag)
    return out


def adf_test(series, max_lag_order: int) -> tuple[float, float]:
    """Augmented Dickey-Fuller regression with constant and linear trend.

    Regresses the first difference on the lagged level, max_lag_order lagged
    differences, an intercept and a linear trend; returns the t-statistic of
    the lagged-level coefficient and its MacKinnon p-value.
    """
    if max_lag_order < 0:
        raise ValueError("max_lag_order must be non-negative")
    x = _longest_run(_as_float_array(series))
    n = len(x)
    p = int(max_lag_order)
    if n < p + 4:
        raise InsufficientLength(
            f"need at least {p + 4} contiguous observations, have {n}"
        )
    dx = np.diff(x)
    nobs = len(dx) - p
    k = p + 3
    if nobs - k < 1:
        raise InsufficientLength(
            f"{nobs} usable rows cannot support {k} regressors"
        )
    rows = np.arange(p, len(dx))
    cols = [x[rows]]  # level one step before each difference
    for i in range(1, p + 1):
        cols.append(dx[rows - i])
    cols.append(np.ones(nobs))
    cols.append(np.arange(1, nobs + 1, dtype=float))
    design = np.column_stack(cols)
    y = dx[rows]

    if np.linalg.matrix_rank(design) < k:
        raise SingularDesign("regression matrix is rank-deficient")
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    sigma2 = float(resid @ resid) / (nobs - k)
    xtx_inv = np.linalg.inv(design.T @ design)
    se = math.sqrt(sigma2 * xtx_inv[0, 0])
    if se == 0.0:
        raise SingularDesign("zero standard error on the lagged level")
    stat = float(beta[0] / se)
    return stat, adf_pvalue_ct(stat)


def default_adf_lag_order(n: int) -> int:
    """Schwert rule, capped so the regression keeps a residual degree of freedom."""
    schwert = int(math.floor(12.0 * (n / 100.0) ** 0.25))
    return max(0, min(schwert, (n - 5) // 2))


def decompose_strengths(series, seasonal_period: int) -> tuple[float, float, float]:
    """Variance shares of the trend, seasonal and residual components.

    Classical additive decomposition: centered moving-average trend of window
    seasonal_period (the even case uses the usual 2xm average), seasonal
    component as re-centered period-position means of the detrended values,
    residual as the remainder. All variances are taken over the indices where
    the trend is defined.
    """
    if seasonal_period < 2:
        raise NonPositivePeriod(f"seasonal_period {seasonal_period} < 2")
    m = int(seasonal_period)
    x = _longest_run(_as_float_array(series))
    n = len(x)
    if n < 2 * m:
        raise InsufficientLength(
            f"need at least {2 * m} contiguous observations, have {n}"
        )
    half = m // 2
    if m % 2 == 1:
        kernel = np.full(m, 1.0 / m)
    else:
        kernel = np.full(m + 1, 1.0 / m)
        kernel[0] = kernel[-1] = 0.5 / m
    trend_vals = np.convolve(x, kernel, mode="valid")
    valid = np.arange(half, n - half)
    detrended = x[valid] - trend_vals

    seasonal_means = np.zeros(m)
    for j in range(m):
        sel = (valid % m) == j
        seasonal_means[j] = float(np.mean(detrended[sel]))
    seasonal_means -= seasonal_means.mean()

    seasonal = seasonal_means[valid % m]
    residual = detrended - seasonal
    var_x = float(np.var(x[valid]))
    if var_x == 0.0:
        raise ZeroVariance("constant series over the decomposition window")
    return (
        float(np.var(trend_vals)) / var_x,
        float(np.var(seasonal)) / var_x,
        float(np.var(residual)) / var_x,
    )


def outlier_ratio(series) -> float:
    """Fraction of observations outside the Tukey fences Q1-1.5*IQR, Q3+1.5*IQR."""
    obs = _observed(_as_float_array(series))
    if len(obs) == 0:
        raise EmptySeries("all observations are NA")
    s = np.sort(obs)
    q1 = _quantile(s, 0.25)
    q3 = _quantile(s, 0.75)
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return float(np.mean((obs < lo) | (obs > hi)))


def _count_extrema(x: np.ndarray) -> tuple[int, int]:
    peaks = troughs = 0
    for t in range(1, len(x) - 1):
        if x[t - 1] < x[t] and x[t] > x[t + 1]:
            peaks += 1
        elif x[t - 1] > x[t] and x[t] < x[t + 1]:
            troughs += 1
    return peaks, troughs


def extract_meta_features(
    series,
    seasonal_period: int,
    adf_max_lag: int | None = None,
) -> MetaFeatureVector:
    """Populate the whole descriptor vector for one series.

    Moment statistics need 3 retained observations (std and the difference
    std settle for what their denominators allow); autocorrelation, the ADF
    test and the decomposition additionally need a long enough contiguous
    stretch. Anything below its threshold becomes None rather than an error;
    only an all-NA series or a period below 2 raise.
    """
    if seasonal_period < 2:
        raise NonPositivePeriod(f"seasonal_period {seasonal_period} < 2")
    x = _as_float_array(series)
    obs = _observed(x)
    count = int(len(obs))
    missing = int(len(x) - count)
    if count == 0:
        raise EmptySeries("all observations are NA")

    mean = float(np.mean(obs))
    s = np.sort(obs)
    vmin, vmax = float(s[0]), float(s[-1])
    q25 = _quantile(s, 0.25)
    median = _quantile(s, 0.5)
    q75 = _quantile(s, 0.75)
    iqr = q75 - q25
    lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
    out_ratio = float(np.mean((obs < lo_fence) | (obs > hi_fence)))
    zero_ratio = float(np.mean(obs == 0.0))

    std = variance = None
    if count >= 2:
        variance = float(np.var(obs, ddof=1))
        std = math.sqrt(variance)

    skewness = kurtosis = None
    if count >= 3:
        centered = obs - mean
        m2 = float(np.mean(centered ** 2))
        if m2 == 0.0:
            skewness = 0.0  # degenerate-moment convention for constant series
            kurtosis = 0.0
        else:
            skewness = float(np.mean(centered ** 3)) / m2 ** 1.5
            kurtosis = float(np.mean(centered ** 4)) / m2 ** 2 - 3.0

    coef_of_variation = None
    if std is not None and mean != 0.0:
        coef_of_variation = std / abs(mean)

    trend_strength = None
    if count >= 2:
        t_idx = np.arange(count, dtype=float)
        slope = float(np.polyfit(t_idx, obs, 1)[0])
        trend_strength = abs(slope)

    nonlinearity_proxy = None
    if count >= 3:
        diffs = np.diff(obs)
        nonlinearity_proxy = float(np.std(diffs, ddof=1))

    peaks, troughs = _count_extrema(obs)

    acf_map: dict[int, float | None] = {k: None for k in ACF_LAGS}
    pacf_map: dict[int, float | None] = {k: None for k in ACF_LAGS}
    try:
        acf_map = acf(x, ACF_LAGS)
        pacf_map = pacf(x, ACF_LAGS)
    except (ZeroVariance, EmptySeries):
        pass

    adf_stat = adf_pval = None
    try:
        run = _longest_run(x)
        p = default_adf_lag_order(len(run)) if adf_max_lag is None else adf_max_lag
        adf_stat, adf_pval = adf_test(x, p)
    except (InsufficientLength, SingularDesign, EmptySeries):
        pass

    trend_decomp = seasonal_decomp = residual_decomp = None
    try:
        trend_decomp, seasonal_decomp, residual_decomp = decompose_strengths(
            x, seasonal_period
        )
    except (InsufficientLength, ZeroVariance, EmptySeries):
        pass

    return MetaFeatureVector(
        count=count,
        missing=missing,
        mean=mean,
        std=std,
        min=vmin,
        q25=q25,
        median=median,
        q75=q75,
        max=vmax,
        range=vmax - vmin,
        iqr=iqr,
        variance=variance,
        skewness=skewness,
        kurtosis=kurtosis,
        coef_of_variation=coef_of_variation,
        trend_strength=trend_strength,
        adf_stat=adf_stat,
        adf_pvalue=adf_pval,
        nonlinearity_proxy=nonlinearity_proxy,
        trend_strength_decomp=trend_decomp,
        seasonal_strength_decomp=seasonal_decomp,
        residual_strength=residual_decomp,
        acf=acf_map,
        pacf=pacf_map,
        num_peaks=peaks,
        num_troughs=troughs,
        zero_ratio=zero_ratio,
        outlier_ratio=out_ratio,
    )


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def summarize(vector: MetaFeatureVector) -> MetaSummary:
    """Map a descriptor vector onto coarse labels plus a short narrative.

    Pure function of the vector; NA inputs degrade to "inconclusive" (or
    "none" for the strength labels) and drop out of the narrative.
    """
    narrative: list[str] = []

    acf_vals = [v for v in vector.acf.values() if v is not None]
    if not acf_vals:
        dependence = "inconclusive"
    else:
        mean_abs = float(np.mean(np.abs(acf_vals)))
        if mean_abs < DEPENDENCE_WEAK_BELOW:
            dependence = "weak"
        elif mean_abs < DEPENDENCE_MODERATE_BELOW:
            dependence = "moderate"
        else:
            dependence = "strong"
        narrative.append(
            f"Temporal dependence is {dependence} "
            f"(mean absolute autocorrelation {_fmt(mean_abs)})."
        )

    if vector.adf_pvalue is None:
        stationarity = "inconclusive"
    else:
        stationarity = (
            "stationary" if vector.adf_pvalue < STATIONARY_PVALUE_BELOW
            else "non-stationary"
        )
        narrative.append(
            f"The unit-root test p-value is {_fmt(vector.adf_pvalue)}, "
            f"so the series looks {stationarity}."
        )

    def strength_label(value: float | None, kind: str) -> str:
        if value is None:
            return "none"
        if value < STRENGTH_NONE_BELOW:
            label = "none"
        elif value < STRENGTH_MILD_BELOW:
            label = "mild"
        else:
            label = "pronounced"
        narrative.append(
            f"The {kind} component carries {_fmt(value)} of the variance: "
            f"{label} {kind}."
        )
        return label

    trend = strength_label(vector.trend_strength_decomp, "trend")
    seasonality = strength_label(vector.seasonal_strength_decomp, "seasonal")

    indicators = []
    if vector.coef_of_variation is not None:
        indicators.append(vector.coef_of_variation > NOISE_CV_ABOVE)
    if vector.residual_strength is not None:
        indicators.append(vector.residual_strength > NOISE_RESIDUAL_ABOVE)
    if vector.outlier_ratio is not None:
        indicators.append(vector.outlier_ratio > NOISE_OUTLIER_ABOVE)
    if not indicators:
        noise = "inconclusive"
    else:
        votes = sum(indicators)
        noise = "low" if votes == 0 else ("medium" if votes == 1 else "high")
        parts = []
        if vector.coef_of_variation is not None:
            parts.append(f"coefficient of variation {_fmt(vector.coef_of_variation)}")
        if vector.residual_strength is not None:
            parts.append(f"residual variance ratio {_fmt(vector.residual_strength)}")
        if vector.outlier_ratio is not None:
            parts.append(f"outlier ratio {_fmt(vector.outlier_ratio)}")
        narrative.append(f"Noise level is {noise} ({', '.join(parts)}).")

    return MetaSummary(
        temporal_dependence=dependence,
        stationarity=stationarity,
        trend=trend,
        seasonality=seasonality,
        noise_level=noise,
        narrative=narrative,
    )


def describe_dataset(dataset, seasonal_period: int) -> dict:
    """Vectors plus summaries for every feature, as the JSON document shape."""
    features = []
    for name in dataset.feature_names:
        vector = extract_meta_features(dataset.values[name], seasonal_period)
        summary = summarize(vector)
        features.append(
            {
                "feature": name,
                "meta_features": vector.to_json_dict(),
                "summary": summary.to_json_dict(),
            }
        )
    return {"seasonal_period": seasonal_period, "features": features}
