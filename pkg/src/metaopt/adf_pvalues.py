"""Approximate p-values for the ADF t-statistic, constant + linear trend case.

Response-surface regression from MacKinnon (1994): the tail of the
Dickey-Fuller tau distribution is mapped onto a normal quantile by a cubic
polynomial in the test statistic, with separate coefficient sets for the
small-p and large-p branches. Only the single-series, constant-and-trend
regression variant is shipped because that is the regression the framework
runs.
"""

import numpy as np
from scipy.stats import norm

# Branch boundaries for the tau_ct distribution (N = 1).
_TAU_MAX = 0.7
_TAU_MIN = -16.18
_TAU_STAR = -2.89

# Polynomial coefficients in increasing order, p = Phi(c0 + c1*t + c2*t^2 [+ c3*t^3]).
_SMALLP = (3.2512, 1.6047, 4.9588e-2)
_LARGEP = (2.5261, 6.1654e-1, -3.7956e-1, -6.0285e-2)


def adf_pvalue_ct(stat: float) -> float:
    """p-value for an ADF t-statistic from the constant+trend regression."""
    if stat > _TAU_MAX:
        return 1.0
    if stat < _TAU_MIN:
        return 0.0
    coeffs = _SMALLP if stat <= _TAU_STAR else _LARGEP
    return float(norm.cdf(np.polyval(coeffs[::-1], stat)))
