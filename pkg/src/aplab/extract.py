"""Turn interval streams into trimmed waiting-time histograms.

Every interval within ``period_jitter_cycles`` of ``period_cycles`` is a
pulse-to-pulse period; a period containing an extra count contributes the
pulse-to-extra interval (kept) followed by the extra-to-pulse remainder
(discarded).  Histogram bin ``i`` covers cycles
``[trim_bins + i, trim_bins + i + 1)``; the first ``trim_bins`` cycles are
removed because they cover the dead time and the detector recovery region.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyHistogramError, MalformedStreamError
from .sim import DetectorConfig, IntervalStream


@dataclass
class ResponseHistogram:
    """Per-bin counts of extra-count waiting times after trimming.

    ``counts[i]`` covers cycles ``[trim_bins + i, trim_bins + i + 1)``, i.e.
    bin centers sit at ``(i + 0.5) * bin_width`` us on a time axis whose
    origin is the trim point (``t_offset`` us after the avalanche).
    ``n_extras`` counts all extra events before trimming, so
    ``p_ad_hat = n_extras / n_periods`` while ``n_total = sum(counts)``
    counts only events inside the kept window.
    """

    counts: np.ndarray
    n_total: int
    n_periods: int
    n_extras: int
    bin_width: float
    t_offset: float
    p_ad_hat: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or len(self.counts) == 0:
            raise ValueError("counts must be a non-empty 1-d array")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if int(self.counts.sum()) != self.n_total:
            raise ValueError("n_total must equal sum(counts)")

    @classmethod
    def from_parts(cls, counts, n_periods, n_extras, bin_width, t_offset):
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts=counts, n_total=int(counts.sum()),
                   n_periods=int(n_periods), n_extras=int(n_extras),
                   bin_width=float(bin_width), t_offset=float(t_offset),
                   p_ad_hat=n_extras / n_periods)

    @property
    def n_bins(self):
        return len(self.counts)

    @property
    def bin_centers(self):
        """Bin centers in us on the trimmed time axis (origin = trim point)."""
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def window_length(self):
        """Length of the observed window in us."""
        return self.n_bins * self.bin_width

    @property
    def normalized(self):
        """Per-bin observed probabilities counts / n_total."""
        return self.counts / self.n_total

    def fingerprint(self):
        """Stable hex digest identifying the histogram contents."""
        h = hashlib.sha256()
        h.update(np.float64([self.bin_width, self.t_offset]).tobytes())
        h.update(np.int64([self.n_total, self.n_periods, self.n_extras]).tobytes())
        h.update(np.ascontiguousarray(self.counts).tobytes())
        return h.hexdigest()


def _as_intervals(stream, config):
    if isinstance(stream, IntervalStream):
        if config is not None and \
                stream.config.period_cycles != config.period_cycles:
            raise ConfigError("stream was recorded with a different period")
        return stream.intervals, (config or stream.config)
    if config is None:
        raise ValueError("a DetectorConfig is required for raw interval arrays")
    return np.asarray(stream), config


def extract_extra_intervals(stream, config: DetectorConfig = None):
    """Split a stream into extra-count cycle values and a period count.

    Returns ``(extras, n_periods)`` where ``extras`` holds the pulse-to-extra
    interval of every period that contains an extra count; the extra-to-pulse
    remainders are discarded.  Accepts an :class:`IntervalStream` or a raw
    interval array plus ``config``.
    """
    iv, config = _as_intervals(stream, config)
    iv = np.asarray(iv, dtype=np.int64)
    p, j = config.period_cycles, config.period_jitter_cycles
    if iv.size == 0:
        return np.empty(0, dtype=np.int64), 0
    if int(iv.max()) > p + j:
        raise MalformedStreamError(
            f"interval {int(iv.max())} exceeds the period window {p + j}")

    is_period = (iv >= p - j) & (iv <= p + j)
    odd = np.where(~is_period)[0]
    if odd.size == 0:
        return np.empty(0, dtype=np.int64), int(len(iv))
    # fast path: extras and remainders strictly alternate and each pair sums
    # to one period
    if odd.size % 2 == 0 and np.array_equal(odd[1::2], odd[::2] + 1):
        pair_sum = iv[odd[::2]] + iv[odd[1::2]]
        if np.all((pair_sum >= p - j) & (pair_sum <= p + j)):
            extras = iv[odd[::2]].copy()
            n_periods = int(is_period.sum()) + len(extras)
            return extras, n_periods
    return _extract_general(iv, p, j)


def _extract_general(iv, p, j):
    """Cumulative parser for streams with several counts per period."""
    extras, n_periods = [], 0
    acc = 0
    first = None
    for x in iv.tolist():
        if acc == 0 and p - j <= x <= p + j:
            n_periods += 1
            continue
        if first is None:
            first = x
        acc += x
        if p - j <= acc <= p + j:
            extras.append(first)
            n_periods += 1
            acc, first = 0, None
        elif acc > p + j:
            raise MalformedStreamError(
                f"intervals accumulate to {acc}, past the period window")
    # a trailing partial period (truncated stream) is silently dropped
    return np.asarray(extras, dtype=np.int64), n_periods


def build_histogram(extras, config: DetectorConfig,
                    n_periods: int) -> ResponseHistogram:
    """Bin extra-count cycle values into a trimmed ResponseHistogram.

    Cycles below ``trim_bins`` are dropped (they are excluded from
    ``n_total`` but still counted in ``p_ad_hat``); the bin domain extends to
    the largest observed cycle, capped at ``period_cycles - 1``.
    """
    extras = np.asarray(extras, dtype=np.int64)
    if extras.size == 0:
        raise EmptyHistogramError("no extra counts to bin")
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    trim = config.trim_bins
    kept = extras[extras >= trim]
    if kept.size == 0:
        raise EmptyHistogramError("all extra counts fall below the trim")
    top = min(int(kept.max()), config.period_cycles - 1)
    counts = np.bincount(kept[kept <= top] - trim, minlength=top - trim + 1)
    return ResponseHistogram.from_parts(
        counts=counts, n_periods=n_periods, n_extras=len(extras),
        bin_width=config.tdc_cycle, t_offset=config.trim_offset_us)


def merge_histograms(a: ResponseHistogram, b: ResponseHistogram):
    """Add two histograms with identical bin geometry.

    Associative and commutative; counts, totals and period counts add, and
    the shorter domain is zero-padded to the longer one.
    """
    if a.bin_width != b.bin_width or a.t_offset != b.t_offset:
        raise ValueError("histograms have different bin geometry")
    n = max(a.n_bins, b.n_bins)
    counts = np.zeros(n, dtype=np.int64)
    counts[:a.n_bins] += a.counts
    counts[:b.n_bins] += b.counts
    return ResponseHistogram.from_parts(
        counts=counts, n_periods=a.n_periods + b.n_periods,
        n_extras=a.n_extras + b.n_extras, bin_width=a.bin_width,
        t_offset=a.t_offset)


def histogram_from_stream(stream, config: DetectorConfig = None):
    """Extract and bin in one step."""
    iv, config = _as_intervals(stream, config)
    extras, n_periods = extract_extra_intervals(iv, config)
    return build_histogram(extras, config, n_periods)
