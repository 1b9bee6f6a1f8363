"""Goodness-of-fit statistics and the derived afterpulse probability.

The fit quality of a waiting-time model is judged two ways: the classical
R-squared of the normalized histogram, and a Pearson chi-square over all
bins normalized by its critical value at a chosen confidence level (so a
normalized value at or below 1 means the model matches the data up to
sampling fluctuation).  Residual diagnostics use the per-bin binomial
deviation sigma(t) = sqrt(p(t)(1-p(t))/n), with roughly 95% of residuals
expected inside +/-2 sigma under a correct model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InconsistentFitError, UndefinedStatisticError
from .extract import ResponseHistogram
from .fit import model_probs


@dataclass
class ResidualBounds:
    """Per-bin residuals with their two-sigma binomial bounds."""

    residuals: np.ndarray
    two_sigma: np.ndarray
    outside: np.ndarray  # bool mask of bins beyond +/-2 sigma

    @property
    def outside_fraction(self):
        return float(self.outside.mean())


@dataclass
class GofReport:
    """Everything reported per fitted model in the summary tables."""

    r_squared: float
    one_minus_r2: float
    chi2: float
    chi2_crit: float
    chi2_normalized: float
    dof: int
    p_a: float
    residuals: np.ndarray
    sigma_bounds: np.ndarray
    n_free_params: int


def _check_lengths(histogram, model_probs_arr):
    q = np.asarray(model_probs_arr, dtype=float)
    if q.shape != (histogram.n_bins,):
        raise ValueError("model probabilities must match the histogram bins")
    return q


def r_squared(histogram: ResponseHistogram, model_probs_arr) -> float:
    """1 - SSE/SStot of the normalized histogram against model probabilities."""
    q = _check_lengths(histogram, model_probs_arr)
    if q.sum() > 1.1:
        raise ValueError("model probabilities sum far beyond 1")
    h = histogram.normalized
    ss_tot = float(((h - h.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise UndefinedStatisticError("constant observations: R^2 undefined")
    sse = float(((h - q) ** 2).sum())
    return 1.0 - sse / ss_tot


def chi2_statistic(histogram: ResponseHistogram, model_probs_arr,
                   n_free_params: int):
    """Pearson chi-square over all bins and its degrees of freedom.

    chi2 = sum (O_i - n q_i)^2 / (n q_i) with raw counts O_i and
    n = n_total; dof = bins - n_free_params - 1 (the normalization constraint
    consumes one).  Bins beyond the last observed count are excluded; a
    positive expected value that underflowed to zero is floored at 1e-300
    for the evaluation only.
    """
    q = _check_lengths(histogram, model_probs_arr)
    if np.any(q < 0):
        raise ValueError("model is invalid on the window (negative probability)")
    counts = histogram.counts
    last = int(np.nonzero(counts)[0][-1]) if counts.any() else -1
    if last < 0:
        raise ValueError("histogram has no counts")
    counts, q = counts[:last + 1], q[:last + 1]
    n = histogram.n_total
    expected = n * np.maximum(q, 1e-300)
    chi2 = float((((counts - n * q) ** 2) / expected).sum())
    dof = (last + 1) - n_free_params - 1
    if dof <= 0:
        raise ValueError("not enough bins for the free parameter count")
    return chi2, dof


def chi2_critical(dof: int, confidence: float = 0.95) -> float:
    """Upper-tail quantile of the chi-square distribution.

    Starts from the Wilson-Hilferty cube approximation and polishes with
    Newton steps on the regularized incomplete-gamma CDF, giving far better
    than 0.1% accuracy for any dof >= 1.
    """
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    z = special.ndtri(confidence)
    a = 2.0 / (9.0 * dof)
    x = dof * (1.0 - a + z * math.sqrt(a)) ** 3
    if x <= 0:
        x = dof * 1e-3
    k2 = dof / 2.0
    log_norm = k2 * math.log(2.0) + special.gammaln(k2)
    for _ in range(60):
        cdf = special.gammainc(k2, x / 2.0)
        pdf = math.exp((k2 - 1.0) * math.log(x) - x / 2.0 - log_norm)
        if pdf <= 0:
            break
        step = (cdf - confidence) / pdf
        x_new = x - step
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) <= 1e-13 * x:
            x = x_new
            break
        x = x_new
    return float(x)


def residual_bounds(histogram: ResponseHistogram,
                    model_probs_arr) -> ResidualBounds:
    """Residuals O_i/n - q_i with two-sigma binomial bounds and out-flags."""
    q = _check_lengths(histogram, model_probs_arr)
    n = histogram.n_total
    residuals = histogram.normalized - q
    two_sigma = 2.0 * np.sqrt(np.clip(q * (1.0 - q), 0.0, None) / n)
    outside = np.abs(residuals) > two_sigma
    return ResidualBounds(residuals=residuals, two_sigma=two_sigma,
                          outside=outside)


def afterpulse_probability(params, histogram: ResponseHistogram) -> float:
    """Afterpulse-only share of the extra-count probability per period.

    The fitted dark level v accounts for a fraction
    f_dark = v * T_w / sum(q_i) of the events in the observation window of
    length T_w; the afterpulse probability is the observed extra-count
    fraction scaled by what remains: P_a = p_ad_hat * (1 - f_dark).
    """
    v = params.v
    if v < 0:
        raise ValueError("fitted dark rate must be >= 0")
    q = model_probs(params, histogram)
    f_dark = v * histogram.window_length / float(q.sum())
    if f_dark > 1.0:
        raise InconsistentFitError(
            f"fitted dark level explains {f_dark:.3f} > 1 of the window mass")
    return histogram.p_ad_hat * (1.0 - f_dark)


def gof_report(histogram: ResponseHistogram, params, n_free_params: int,
               confidence: float = 0.95) -> GofReport:
    """Assemble the full goodness-of-fit report for one fitted model."""
    q = model_probs(params, histogram)
    r2 = r_squared(histogram, q)
    chi2, dof = chi2_statistic(histogram, q, n_free_params)
    crit = chi2_critical(dof, confidence)
    bounds = residual_bounds(histogram, q)
    p_a = afterpulse_probability(params, histogram)
    return GofReport(r_squared=r2, one_minus_r2=1.0 - r2, chi2=chi2,
                     chi2_crit=crit, chi2_normalized=chi2 / crit, dof=dof,
                     p_a=p_a, residuals=bounds.residuals,
                     sigma_bounds=bounds.two_sigma,
                     n_free_params=n_free_params)
