"""Monte Carlo simulation of a gated single-photon detector's count stream.

A pulsed laser fires every ``period_cycles`` TDC cycles and each pulse
produces a photocount.  Inside a period at most one extra count can occur
(afterpulse or dark count, whichever candidate comes first), subject to the
detector dead time.  The emitted stream is the sequence of integer TDC-cycle
intervals between successive counts, exactly as a time-to-digital converter
would report them.

Afterpulse release times are measured from the avalanche; the generative
models place their time origin at the histogram trim point (``trim_bins``
cycles after the avalanche), so a sampled waiting time ``t`` appears in the
stream at cycle ``trim_bins + floor(t/tdc_cycle)``.  Dark counts form a
homogeneous Poisson process and can appear anywhere after dead-time expiry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

_BLOCK = 1 << 21  # periods per RNG block; fixed so output is seed-reproducible

DISCRETE_LEVELS = "DiscreteLevels"
LOG_UNIFORM_CONTINUUM = "LogUniformContinuum"
POWER_LAW_TRAPS = "PowerLaw"


@dataclass(frozen=True)
class DetectorConfig:
    """Timing constants of the pulsed-illumination experiment.

    Defaults describe a 25 kHz repetition rate measured with a 2.5 ns TDC:
    16000 +/- 2 cycles per period, 18-cycle (45 ns) dead time, and a 22-bin
    trim that removes the detector recovery region from histograms.
    """

    period_cycles: int = 16000
    tdc_cycle: float = 0.0025  # us
    dead_time_cycles: int = 18
    trim_bins: int = 22
    period_jitter_cycles: int = 2

    def __post_init__(self):
        if not self.period_cycles > self.trim_bins > self.dead_time_cycles > 0:
            raise ConfigError(
                "need period_cycles > trim_bins > dead_time_cycles > 0")
        if self.tdc_cycle <= 0:
            raise ConfigError("tdc_cycle must be positive")
        if self.period_jitter_cycles < 0:
            raise ConfigError("period_jitter_cycles must be >= 0")
        if self.period_jitter_cycles >= self.period_cycles - self.trim_bins:
            raise ConfigError("period jitter too large for the period length")

    @property
    def period_us(self):
        return self.period_cycles * self.tdc_cycle

    @property
    def dead_time_us(self):
        return self.dead_time_cycles * self.tdc_cycle

    @property
    def trim_offset_us(self):
        """Time of the first kept histogram bin's left edge after an avalanche."""
        return self.trim_bins * self.tdc_cycle


@dataclass(frozen=True)
class TrapModel:
    """Generative model for spurious counts.

    ``variant`` selects the afterpulse mechanism:

    * ``DiscreteLevels`` -- ``levels`` holds (u_i, tau_i) pairs: with
      probability u_i the avalanche populates level i, which releases after
      an exponential time of mean tau_i (us).
    * ``LogUniformContinuum`` -- ``total_mass`` is the afterpulse probability
      per avalanche; the lifetime is drawn log-uniformly on
      [tau_min, tau_max] and the release time exponentially with that mean.
    * ``PowerLaw`` -- fit-only comparison shape (D, alpha, t_d); it has no
      normalizable waiting-time distribution on (0, inf) for alpha <= 1, so
      sampling from it is rejected.

    ``dark_rate`` is the homogeneous Poisson rate v in counts/us.  With
    ``cascade_enabled`` every detected extra count seeds afterpulses of its
    own (sensitivity studies only; the default keeps one avalanche origin
    per period).
    """

    variant: str
    levels: tuple = ()
    total_mass: float = 0.0
    tau_min: float = 0.0
    tau_max: float = 0.0
    D: float = 0.0
    alpha: float = 0.0
    t_d: float = 0.0
    dark_rate: float = 0.0
    cascade_enabled: bool = False

    def __post_init__(self):
        if self.dark_rate < 0:
            raise ConfigError("dark_rate must be >= 0")
        if self.variant == DISCRETE_LEVELS:
            levels = tuple((float(u), float(tau)) for u, tau in self.levels)
            object.__setattr__(self, "levels", levels)
            if any(u < 0 for u, _ in levels) or any(tau <= 0 for _, tau in levels):
                raise ConfigError("levels need u >= 0 and tau > 0")
            if sum(u for u, _ in levels) > 1.0:
                raise ConfigError("total level mass must be <= 1")
        elif self.variant == LOG_UNIFORM_CONTINUUM:
            if not 0 <= self.total_mass <= 1:
                raise ConfigError("total_mass must be in [0, 1]")
            if not 0 < self.tau_min <= self.tau_max:
                raise ConfigError("need 0 < tau_min <= tau_max")
        elif self.variant == POWER_LAW_TRAPS:
            if self.D <= 0 or self.alpha <= 0 or self.t_d < 0:
                raise ConfigError("power-law traps need D, alpha > 0 and t_d >= 0")
        else:
            raise ConfigError(f"unknown trap model variant: {self.variant!r}")

    @classmethod
    def discrete(cls, levels, dark_rate=0.0, cascade_enabled=False):
        return cls(variant=DISCRETE_LEVELS, levels=tuple(levels),
                   dark_rate=dark_rate, cascade_enabled=cascade_enabled)

    @classmethod
    def continuum(cls, total_mass, tau_min, tau_max, dark_rate=0.0,
                  cascade_enabled=False):
        return cls(variant=LOG_UNIFORM_CONTINUUM, total_mass=total_mass,
                   tau_min=tau_min, tau_max=tau_max, dark_rate=dark_rate,
                   cascade_enabled=cascade_enabled)

    @classmethod
    def power_law(cls, D, alpha, t_d, dark_rate=0.0):
        return cls(variant=POWER_LAW_TRAPS, D=D, alpha=alpha, t_d=t_d,
                   dark_rate=dark_rate)

    @property
    def afterpulse_mass(self):
        """Probability that an avalanche produces any afterpulse candidate."""
        if self.variant == DISCRETE_LEVELS:
            return sum(u for u, _ in self.levels)
        if self.variant == LOG_UNIFORM_CONTINUUM:
            return self.total_mass
        raise ConfigError("power-law trap model has no generative mass")


@dataclass
class IntervalStream:
    """Sequence of inter-count intervals in TDC cycles.

    Intervals within ``period_jitter_cycles`` of ``period_cycles`` are
    pulse-to-pulse periods; anything else belongs to a period containing an
    extra count.  ``truth`` records the generating model for synthetic data.
    """

    intervals: np.ndarray
    seed: int
    config: DetectorConfig
    truth: Optional[TrapModel] = None

    def __len__(self):
        return len(self.intervals)


def quantize_to_tdc(t, config: DetectorConfig):
    """TDC cycle count for a time ``t`` (us): floor(t / tdc_cycle)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    cyc = np.floor(t / config.tdc_cycle).astype(np.int64)
    return cyc if cyc.shape else int(cyc)


def sample_afterpulse_times(model: TrapModel, rng, size):
    """Vectorized afterpulse waiting-time sampler.

    Returns an array of length ``size`` with waiting times in us measured
    from the model origin, and NaN where the avalanche released no carrier
    (probability 1 - afterpulse mass).
    """
    if model.variant == POWER_LAW_TRAPS:
        raise ConfigError("cannot sample from the power-law trap model")
    out = np.full(size, np.nan)
    r = rng.random(size)
    if model.variant == LOG_UNIFORM_CONTINUUM:
        mass = model.total_mass
        if mass == 0.0:
            return out
        acc = r < mass
        n_acc = int(acc.sum())
        if n_acc:
            # r/mass is uniform on (0,1) given acceptance; reuse it for the
            # log-uniform lifetime pick
            log_ratio = math.log(model.tau_max / model.tau_min)
            tau = model.tau_min * np.exp(log_ratio * (r[acc] / mass))
            out[acc] = rng.standard_exponential(n_acc) * tau
        return out
    # discrete levels
    u = np.array([ui for ui, _ in model.levels])
    taus = np.array([tau for _, tau in model.levels])
    edges = np.cumsum(u)
    idx = np.searchsorted(edges, r, side="right")
    acc = idx < len(u)
    n_acc = int(acc.sum())
    if n_acc:
        out[acc] = rng.standard_exponential(n_acc) * taus[idx[acc]]
    return out


def sample_afterpulse_time(model: TrapModel, rng):
    """Single afterpulse waiting time in us, or None if no carrier released."""
    t = sample_afterpulse_times(model, rng, 1)[0]
    return None if math.isnan(t) else float(t)


def _simulate_block(config: DetectorConfig, model: TrapModel, n: int, rng):
    """Simulate ``n`` periods and return their intervals as uint32 cycles."""
    p, j = config.period_cycles, config.period_jitter_cycles
    dead = config.dead_time_cycles
    dt = config.tdc_cycle
    lengths = p + (rng.integers(-j, j + 1, n) if j > 0 else np.zeros(n, np.int64))

    if model.variant == POWER_LAW_TRAPS:
        raise ConfigError("cannot simulate from the power-law trap model")
    t_extra = sample_afterpulse_times(model, rng, n)
    np.add(t_extra, config.trim_offset_us, out=t_extra)
    t_extra[np.isnan(t_extra)] = np.inf
    if model.dark_rate > 0:
        # first dark arrival after dead-time expiry (memoryless process)
        t_dark = config.dead_time_us + \
            rng.standard_exponential(n) / model.dark_rate
        np.minimum(t_extra, t_dark, out=t_extra)

    cyc = np.floor(t_extra / dt)
    # the extra must leave dead-time room before the next pulse count
    det = cyc <= lengths - dead
    if model.cascade_enabled:
        return _assemble_cascade(config, model, rng, lengths, cyc, det)

    n_det = int(det.sum())
    out = np.empty(n + n_det, dtype=np.uint32)
    pos = np.arange(n) + np.concatenate(([0], np.cumsum(det[:-1])))
    out[pos] = np.where(det, cyc, lengths).astype(np.uint32)
    out[pos[det] + 1] = (lengths[det] - cyc[det]).astype(np.uint32)
    return out


def _assemble_cascade(config, model, rng, lengths, cyc, det):
    """Slow path: detected extras re-seed afterpulses generation by generation."""
    dead = config.dead_time_cycles
    dt = config.tdc_cycle
    events = [[] for _ in range(len(lengths))]
    idx = np.where(det)[0]
    last_cyc = cyc[det]
    for i, c in zip(idx, last_cyc):
        events[i].append(int(c))
    while len(idx):
        t_ap = sample_afterpulse_times(model, rng, len(idx))
        t_cand = last_cyc * dt + config.trim_offset_us + t_ap
        if model.dark_rate > 0:
            t_dark = last_cyc * dt + config.dead_time_us + \
                rng.standard_exponential(len(idx)) / model.dark_rate
            t_cand = np.fmin(np.where(np.isnan(t_cand), np.inf, t_cand), t_dark)
        else:
            t_cand = np.where(np.isnan(t_cand), np.inf, t_cand)
        c_new = np.floor(t_cand / dt)
        keep = c_new <= lengths[idx] - dead
        idx, last_cyc = idx[keep], c_new[keep]
        for i, c in zip(idx, last_cyc):
            events[i].append(int(c))
    parts = []
    for i, length in enumerate(lengths):
        cs = events[i]
        prev = 0
        for c in cs:
            parts.append(c - prev)
            prev = c
        parts.append(int(length) - prev)
    return np.asarray(parts, dtype=np.uint32)


def simulate_periods(config: DetectorConfig, model: TrapModel, n_periods: int,
                     seed: int, n_threads: int = 1) -> IntervalStream:
    """Simulate ``n_periods`` laser periods into an interval stream.

    The run is split into fixed-size blocks, each driven by an independent
    counter-based RNG stream (Philox jumped by the block index), so the
    output is fully determined by ``seed`` regardless of ``n_threads`` and
    blocks may be generated in parallel.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    n_blocks = (n_periods + _BLOCK - 1) // _BLOCK
    sizes = [min(_BLOCK, n_periods - b * _BLOCK) for b in range(n_blocks)]
    base = np.random.Philox(seed)

    def run(b):
        rng = np.random.Generator(base.jumped(b))
        return _simulate_block(config, model, sizes[b], rng)

    if n_threads > 1 and n_blocks > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            chunks = list(pool.map(run, range(n_blocks)))
    else:
        chunks = [run(b) for b in range(n_blocks)]
    intervals = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
    return IntervalStream(intervals=intervals, seed=seed, config=config,
                          truth=model)


def dark_rate_for_p_ad(config: DetectorConfig, afterpulse_mass: float,
                       p_ad: float) -> float:
    """Dark rate v that makes the extra-count fraction per period equal p_ad.

    An extra count occurs when either the afterpulse candidate or the first
    dark arrival lands in the detectable span of the period, so
    ``p_ad = 1 - (1 - m) * exp(-v * span)`` with ``m`` the afterpulse mass
    (afterpulse tail mass beyond the period is negligible for realistic
    lifetimes).
    """
    if not 0 <= afterpulse_mass < 1:
        raise ValueError("afterpulse_mass must be in [0, 1)")
    if not afterpulse_mass <= p_ad < 1:
        raise ValueError("need afterpulse_mass <= p_ad < 1")
    if p_ad == afterpulse_mass:
        return 0.0
    # detectable dark span: from dead-time expiry to the last cycle that
    # leaves dead-time room before the next pulse
    span = (config.period_cycles - config.dead_time_cycles + 1
            - config.dead_time_cycles) * config.tdc_cycle
    return -math.log((1.0 - p_ad) / (1.0 - afterpulse_mass)) / span
