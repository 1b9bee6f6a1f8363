"""Afterpulse waiting-time analysis for single-photon avalanche detectors.

The package covers the full pipeline used to characterize spurious counts
under pulsed illumination:

* :mod:`aplab.sim` -- Monte Carlo generation of TDC interval streams from a
  known trap model (discrete levels, log-uniform lifetime continuum),
* :mod:`aplab.extract` -- extraction of the trimmed waiting-time histogram,
* :mod:`aplab.models` -- closed-form densities (multi-exponential,
  hyperbolic-sinc continuum, power law), masses and analytic derivatives,
* :mod:`aplab.fit` -- log-space Levenberg-Marquardt estimation with
  multistart,
* :mod:`aplab.stats` -- R^2, normalized chi-square, residual bounds and the
  derived afterpulse probability,
* :mod:`aplab.io` / :mod:`aplab.cli` -- file formats and the command-line
  pipeline.
"""

__version__ = "0.1.0"

from . import errors, extract, fit, io, models, sim, stats
from .extract import (ResponseHistogram, build_histogram,
                      extract_extra_intervals, histogram_from_stream,
                      merge_histograms)
from .fit import (FitOutcome, FitProblem, init_heuristic, levenberg_marquardt,
                  model_probs, multistart_fit)
from .models import (MultiExpParams, PowerLawParams, SinhcParams,
                     discretize_continuum, limits_to_rates, model_jacobian,
                     model_pdf, multi_exp_pdf, power_law_pdf, rates_to_limits,
                     sinhc_pdf, trap_mass)
from .sim import (DetectorConfig, IntervalStream, TrapModel,
                  dark_rate_for_p_ad, quantize_to_tdc, sample_afterpulse_time,
                  sample_afterpulse_times, simulate_periods)
from .stats import (GofReport, ResidualBounds, afterpulse_probability,
                    chi2_critical, chi2_statistic, gof_report, r_squared,
                    residual_bounds)

__all__ = [
    "DetectorConfig", "TrapModel", "IntervalStream", "ResponseHistogram",
    "MultiExpParams", "SinhcParams", "PowerLawParams",
    "FitProblem", "FitOutcome", "GofReport", "ResidualBounds",
    "simulate_periods", "sample_afterpulse_time", "sample_afterpulse_times",
    "quantize_to_tdc", "dark_rate_for_p_ad",
    "extract_extra_intervals", "build_histogram", "merge_histograms",
    "histogram_from_stream",
    "multi_exp_pdf", "sinhc_pdf", "power_law_pdf", "model_pdf",
    "limits_to_rates", "rates_to_limits", "discretize_continuum",
    "trap_mass", "model_jacobian",
    "levenberg_marquardt", "multistart_fit", "init_heuristic", "model_probs",
    "r_squared", "chi2_statistic", "chi2_critical", "residual_bounds",
    "afterpulse_probability", "gof_report",
]
