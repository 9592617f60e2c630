"""Seeded synthetic datasets for desk-scale runs and tests."""

from __future__ import annotations

import numpy as np

from .dataset import SeriesDataset


def make_ar2_dataset(n: int = 2000, seed: int = 7) -> SeriesDataset:
    """Two-feature dataset driven by a stationary AR(2) target.

    The target "y" follows y_t = 1.2 y_{t-1} - 0.5 y_{t-2} + e_t (oscillatory,
    well inside the stationarity triangle); the exogenous "x" is a noisy
    one-step-lagged echo of y, so lag windows over both features genuinely
    help a forecaster.
    """
    rng = np.random.default_rng(seed)
    burn = 200
    e = rng.normal(0.0, 1.0, size=n + burn)
    y = np.zeros(n + burn)
    for t in range(2, n + burn):
        y[t] = 1.2 * y[t - 1] - 0.5 * y[t - 2] + e[t]
    y = y[burn:]
    x = np.concatenate(([0.0], y[:-1])) + rng.normal(0.0, 0.3, size=n)
    return SeriesDataset(
        feature_names=["y", "x"],
        values={"y": y, "x": x},
        timestamps=np.arange(n),
    )
