"""On-disk formats: interval files, JSON documents, CSV exports.

Interval streams are stored either as a binary file -- a 64-byte header
(magic ``APLS``, version, TDC cycle, period length, seed) followed by
little-endian uint32 cycle counts -- or as a one-column CSV with a
``# cycles`` header line.  Configurations, models, histograms, fit outcomes
and goodness-of-fit reports are JSON documents carrying a
``schema_version`` field.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import models
from .errors import FormatError
from .extract import ResponseHistogram
from .fit import FitOutcome
from .sim import DetectorConfig, IntervalStream, TrapModel
from .stats import GofReport

SCHEMA_VERSION = 1
_MAGIC = b"APLS"
_HEADER_FMT = "<4sHdIQ"  # magic, version, tdc_cycle, period_cycles, seed
_HEADER_SIZE = 64
_FORMAT_VERSION = 1


# ---------------------------------------------------------------- intervals

def write_intervals_binary(path, stream: IntervalStream):
    head = struct.pack(_HEADER_FMT, _MAGIC, _FORMAT_VERSION,
                       stream.config.tdc_cycle, stream.config.period_cycles,
                       stream.seed & 0xFFFFFFFFFFFFFFFF)
    head += b"\0" * (_HEADER_SIZE - len(head))
    data = np.ascontiguousarray(stream.intervals, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes())


def read_intervals_binary(path):
    """Return (intervals, meta) from a binary interval file."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER_SIZE)
        if len(head) < _HEADER_SIZE or head[:4] != _MAGIC:
            raise FormatError(f"{path}: not a binary interval file")
        magic, version, tdc_cycle, period_cycles, seed = \
            struct.unpack(_HEADER_FMT, head[:struct.calcsize(_HEADER_FMT)])
        if version > _FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        data = np.frombuffer(fh.read(), dtype="<u4")
    meta = {"version": version, "tdc_cycle": tdc_cycle,
            "period_cycles": period_cycles, "seed": seed}
    return data, meta


def write_intervals_csv(path, intervals):
    with open(path, "w") as fh:
        fh.write("# cycles\n")
        np.savetxt(fh, np.asarray(intervals, dtype=np.int64), fmt="%d")


def read_intervals_csv(path):
    data = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=1)
    if data.ndim != 1:
        raise FormatError(f"{path}: expected one integer per line")
    return data


def read_intervals_auto(path):
    """Read a binary or CSV interval file, detected by the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _MAGIC:
        return read_intervals_binary(path)
    return read_intervals_csv(path), {}


# --------------------------------------------------------------------- JSON

def _dump(path, doc):
    doc = dict(doc)
    doc["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def detector_config_to_dict(config: DetectorConfig):
    return {"period_cycles": config.period_cycles,
            "tdc_cycle": config.tdc_cycle,
            "dead_time_cycles": config.dead_time_cycles,
            "trim_bins": config.trim_bins,
            "period_jitter_cycles": config.period_jitter_cycles}


def detector_config_from_dict(doc):
    keys = ("period_cycles", "tdc_cycle", "dead_time_cycles", "trim_bins",
            "period_jitter_cycles")
    try:
        return DetectorConfig(**{k: doc[k] for k in keys if k in doc})
    except (TypeError, KeyError) as exc:
        raise FormatError(f"bad detector config document: {exc}") from exc


def trap_model_to_dict(model: TrapModel):
    doc = {"variant": model.variant, "dark_rate": model.dark_rate,
           "cascade_enabled": model.cascade_enabled}
    if model.variant == "DiscreteLevels":
        doc["levels"] = [[u, tau] for u, tau in model.levels]
    elif model.variant == "LogUniformContinuum":
        doc.update(total_mass=model.total_mass, tau_min=model.tau_min,
                   tau_max=model.tau_max)
    else:
        doc.update(D=model.D, alpha=model.alpha, t_d=model.t_d)
    return doc


def trap_model_from_dict(doc):
    try:
        variant = doc["variant"]
        common = {"dark_rate": doc.get("dark_rate", 0.0),
                  "cascade_enabled": doc.get("cascade_enabled", False)}
        if variant == "DiscreteLevels":
            return TrapModel.discrete([tuple(p) for p in doc["levels"]], **common)
        if variant == "LogUniformContinuum":
            return TrapModel.continuum(doc["total_mass"], doc["tau_min"],
                                       doc["tau_max"], **common)
        if variant == "PowerLaw":
            return TrapModel.power_law(doc["D"], doc["alpha"], doc["t_d"],
                                       dark_rate=common["dark_rate"])
        raise FormatError(f"unknown trap model variant {variant!r}")
    except KeyError as exc:
        raise FormatError(f"bad trap model document: missing {exc}") from exc


def params_to_dict(params):
    fam = models.family_of(params)
    if fam == models.MULTI_EXP:
        return {"family": fam,
                "components": [[u, tau] for u, tau in params.components],
                "v": params.v}
    if fam == models.SINHC:
        return {"family": fam, "C": params.C, "gamma0": params.gamma0,
                "delta": params.delta, "v": params.v,
                "tau_min": params.tau_min, "tau_max": params.tau_max}
    return {"family": fam, "D": params.D, "alpha": params.alpha,
            "t_d": params.t_d, "v": params.v}


def params_from_dict(doc):
    try:
        fam = doc["family"]
        if fam == models.MULTI_EXP:
            return models.MultiExpParams(
                components=tuple(tuple(c) for c in doc["components"]),
                v=doc.get("v", 0.0))
        if fam == models.SINHC:
            return models.SinhcParams(C=doc["C"], gamma0=doc["gamma0"],
                                      delta=doc["delta"], v=doc.get("v", 0.0))
        if fam == models.POWER_LAW:
            return models.PowerLawParams(D=doc["D"], alpha=doc["alpha"],
                                         t_d=doc["t_d"], v=doc.get("v", 0.0))
        raise FormatError(f"unknown model family {fam!r}")
    except KeyError as exc:
        raise FormatError(f"bad parameter document: missing {exc}") from exc


def histogram_to_dict(hist: ResponseHistogram):
    return {"bin_width": hist.bin_width, "t_offset": hist.t_offset,
            "n_total": hist.n_total, "n_periods": hist.n_periods,
            "n_extras": hist.n_extras, "p_ad_hat": hist.p_ad_hat,
            "counts": hist.counts.tolist()}


def histogram_from_dict(doc):
    try:
        n_extras = doc.get("n_extras")
        if n_extras is None:
            n_extras = round(doc["p_ad_hat"] * doc["n_periods"])
        return ResponseHistogram.from_parts(
            counts=np.asarray(doc["counts"], dtype=np.int64),
            n_periods=doc["n_periods"], n_extras=n_extras,
            bin_width=doc["bin_width"], t_offset=doc["t_offset"])
    except KeyError as exc:
        raise FormatError(f"bad histogram document: missing {exc}") from exc


def fit_outcome_to_dict(outcome: FitOutcome, seed=None):
    return {"family": outcome.family,
            "params": params_to_dict(outcome.params),
            "sse": outcome.sse,
            "converged": outcome.converged,
            "n_iterations": outcome.n_iterations,
            "start_index": outcome.start_index,
            "failures": outcome.failures,
            "grad_cosine": outcome.grad_cosine,
            "n_free_params": outcome.n_free_params,
            "histogram_fingerprint": outcome.fingerprint,
            "seed": seed}


def fit_outcome_from_dict(doc):
    try:
        return FitOutcome(params=params_from_dict(doc["params"]),
                          sse=doc["sse"], converged=doc["converged"],
                          n_iterations=doc["n_iterations"],
                          start_index=doc.get("start_index", 0),
                          failures=doc.get("failures", 0),
                          grad_cosine=doc.get("grad_cosine", float("nan")),
                          n_free_params=doc.get("n_free_params", 0),
                          family=doc.get("family", ""),
                          fingerprint=doc.get("histogram_fingerprint", ""))
    except KeyError as exc:
        raise FormatError(f"bad fit outcome document: missing {exc}") from exc


def gof_report_to_dict(report: GofReport):
    return {"r_squared": report.r_squared,
            "one_minus_r2": report.one_minus_r2,
            "chi2": report.chi2, "chi2_crit": report.chi2_crit,
            "chi2_normalized": report.chi2_normalized, "dof": report.dof,
            "p_a": report.p_a, "n_free_params": report.n_free_params,
            "residuals": report.residuals.tolist(),
            "sigma_bounds": report.sigma_bounds.tolist()}


# write_* / read_* convenience wrappers

def write_json(path, obj, seed=None):
    if isinstance(obj, DetectorConfig):
        _dump(path, detector_config_to_dict(obj))
    elif isinstance(obj, TrapModel):
        _dump(path, trap_model_to_dict(obj))
    elif isinstance(obj, ResponseHistogram):
        _dump(path, histogram_to_dict(obj))
    elif isinstance(obj, FitOutcome):
        _dump(path, fit_outcome_to_dict(obj, seed=seed))
    elif isinstance(obj, GofReport):
        _dump(path, gof_report_to_dict(obj))
    elif hasattr(obj, "param_names"):
        _dump(path, params_to_dict(obj))
    elif isinstance(obj, dict):
        _dump(path, obj)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_histogram_csv(path, hist: ResponseHistogram):
    """Two-column export: bin center (us) and raw count."""
    table = np.column_stack([hist.bin_centers, hist.counts])
    with open(path, "w") as fh:
        fh.write("# bin_center_us,count\n")
        np.savetxt(fh, table, fmt=["%.9g", "%d"], delimiter=",")


def write_residuals_csv(path, hist: ResponseHistogram, report: GofReport):
    """Residuals with their +/-2 sigma bounds for plotting."""
    table = np.column_stack([hist.bin_centers, report.residuals,
                             -report.sigma_bounds, report.sigma_bounds])
    with open(path, "w") as fh:
        fh.write("# bin_center_us,residual,minus2sigma,plus2sigma\n")
        np.savetxt(fh, table, delimiter=",")
