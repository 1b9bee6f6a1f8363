"""Monte Carlo generator: samplers, period simulation, determinism."""

import math

import numpy as np
import pytest
from scipy import stats as sps

import aplab
from aplab.errors import ConfigError
from conftest import REFERENCE_P_AD, reference_model, reference_sinhc_params


class TestDetectorConfig:
    def test_defaults_match_reference_setup(self):
        cfg = aplab.DetectorConfig()
        assert cfg.period_cycles == 16000
        assert cfg.tdc_cycle == 0.0025
        assert cfg.dead_time_cycles == 18
        assert cfg.trim_bins == 22
        assert cfg.period_jitter_cycles == 2
        assert cfg.period_us == pytest.approx(40.0)
        assert cfg.dead_time_us == pytest.approx(0.045)
        assert cfg.trim_offset_us == pytest.approx(0.055)

    @pytest.mark.parametrize("kwargs", [
        {"trim_bins": 16001},
        {"dead_time_cycles": 25},          # above trim
        {"tdc_cycle": 0.0},
        {"period_jitter_cycles": -1},
    ])
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            aplab.DetectorConfig(**kwargs)


class TestQuantize:
    def test_examples(self):
        cfg = aplab.DetectorConfig()
        assert aplab.quantize_to_tdc(0.0055, cfg) == 2
        assert aplab.quantize_to_tdc(0.0, cfg) == 0
        assert aplab.quantize_to_tdc(0.0449, cfg) == 17

    def test_monotone(self):
        cfg = aplab.DetectorConfig()
        t = np.sort(np.random.default_rng(0).uniform(0, 50, 1000))
        cyc = aplab.quantize_to_tdc(t, cfg)
        assert np.all(np.diff(cyc) >= 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            aplab.quantize_to_tdc(-0.1, aplab.DetectorConfig())


class TestTrapModelValidation:
    def test_power_law_cannot_sample(self):
        model = aplab.TrapModel.power_law(0.41, 1.15, 0.055)
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            aplab.sample_afterpulse_time(model, rng)

    def test_mass_bounds(self):
        with pytest.raises(ConfigError):
            aplab.TrapModel.continuum(1.2, 0.1, 1.0)
        with pytest.raises(ConfigError):
            aplab.TrapModel.discrete([(0.7, 0.1), (0.5, 1.0)])

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            aplab.TrapModel(variant="Mystery")


class TestSamplers:
    def test_discrete_mean_matches_lifetime(self):
        # a single always-firing level: empirical mean -> tau
        model = aplab.TrapModel.discrete([(1.0, 0.1526)])
        rng = np.random.default_rng(42)
        t = aplab.sample_afterpulse_times(model, rng, 200_000)
        assert not np.any(np.isnan(t))
        assert t.mean() == pytest.approx(0.1526, rel=0.01)

    def test_absent_probability(self):
        model = aplab.TrapModel.discrete([(0.2, 0.1), (0.1, 1.0)])
        rng = np.random.default_rng(1)
        t = aplab.sample_afterpulse_times(model, rng, 400_000)
        present = 1.0 - np.isnan(t).mean()
        assert present == pytest.approx(0.3, abs=0.003)

    def test_discrete_mixture_mean(self):
        model = aplab.TrapModel.discrete([(0.2, 0.1), (0.1, 1.0)])
        rng = np.random.default_rng(2)
        t = aplab.sample_afterpulse_times(model, rng, 400_000)
        expect = (0.2 * 0.1 + 0.1 * 1.0) / 0.3
        assert np.nanmean(t) == pytest.approx(expect, rel=0.02)

    def test_degenerate_continuum_is_exponential(self):
        model = aplab.TrapModel.continuum(1.0, 0.4, 0.4)
        rng = np.random.default_rng(3)
        t = aplab.sample_afterpulse_times(model, rng, 200_000)
        assert t.mean() == pytest.approx(0.4, rel=0.02)
        assert t.std() == pytest.approx(0.4, rel=0.02)

    def test_scalar_wrapper(self):
        model = aplab.TrapModel.continuum(0.5, 0.1, 1.0)
        rng = np.random.default_rng(4)
        draws = [aplab.sample_afterpulse_time(model, rng) for _ in range(500)]
        assert any(d is None for d in draws)
        assert all(d > 0 for d in draws if d is not None)

    def test_continuum_matches_analytic_density(self):
        """Binned chi-square of 1e6 draws against the closed-form masses."""
        params = reference_sinhc_params()
        # mass 1.0 draws have the same conditional law as accepted draws
        model = aplab.TrapModel.continuum(1.0, params.tau_min, params.tau_max)
        rng = np.random.default_rng(5)
        n = 1_000_000
        t = aplab.sample_afterpulse_times(model, rng, n)
        shape = aplab.SinhcParams(C=params.C, gamma0=params.gamma0,
                                  delta=params.delta, v=0.0)
        total = aplab.trap_mass(shape, (0.0, math.inf))
        edges = np.r_[0.0, np.geomspace(1e-3, 60.0, 120), np.inf]
        expected = np.array([
            aplab.trap_mass(shape, (a, b)) / total
            for a, b in zip(edges[:-1], edges[1:])])
        observed = np.histogram(t, bins=edges)[0]
        keep = expected * n >= 5
        chi2 = (((observed[keep] - n * expected[keep]) ** 2)
                / (n * expected[keep])).sum()
        p_value = sps.chi2.sf(chi2, keep.sum() - 1)
        assert p_value > 0.01


class TestSimulatePeriods:
    def test_zero_noise_gives_pure_periods(self, config):
        model = aplab.TrapModel.continuum(0.0, 0.1, 1.0)
        stream = aplab.simulate_periods(config, model, 5000, seed=7)
        iv = stream.intervals
        assert len(iv) == 5000
        assert np.all(iv >= config.period_cycles - config.period_jitter_cycles)
        assert np.all(iv <= config.period_cycles + config.period_jitter_cycles)

    def test_seed_determinism_byte_identical(self, config, truth_model):
        a = aplab.simulate_periods(config, truth_model, 300_000, seed=99)
        b = aplab.simulate_periods(config, truth_model, 300_000, seed=99)
        assert a.intervals.tobytes() == b.intervals.tobytes()
        c = aplab.simulate_periods(config, truth_model, 300_000, seed=100)
        assert a.intervals.tobytes() != c.intervals.tobytes()

    def test_threaded_equals_serial(self, config, truth_model):
        a = aplab.simulate_periods(config, truth_model, 4_500_000, seed=12)
        b = aplab.simulate_periods(config, truth_model, 4_500_000, seed=12,
                                   n_threads=4)
        assert a.intervals.tobytes() == b.intervals.tobytes()

    def test_dead_time_floor(self, config, truth_model):
        stream = aplab.simulate_periods(config, truth_model, 500_000, seed=8)
        assert int(stream.intervals.min()) >= config.dead_time_cycles

    def test_at_most_one_extra_per_period(self, config, truth_model):
        stream = aplab.simulate_periods(config, truth_model, 200_000, seed=13)
        iv = stream.intervals
        p, j = config.period_cycles, config.period_jitter_cycles
        is_period = (iv >= p - j) & (iv <= p + j)
        odd = np.where(~is_period)[0]
        # extras and remainders strictly alternate
        assert odd.size % 2 == 0
        assert np.array_equal(odd[1::2], odd[::2] + 1)

    def test_extra_fraction_converges(self, config, truth_model):
        stream = aplab.simulate_periods(config, truth_model, 10_000_000,
                                        seed=15)
        extras, n_periods = aplab.extract_extra_intervals(stream)
        assert len(extras) / n_periods == pytest.approx(REFERENCE_P_AD,
                                                        abs=0.0003)

    def test_dark_only_waiting_times(self, config):
        # detected dark time = dead time + Exp(1/v) truncated by the period;
        # truncation shifts the mean by T*exp(-vT)/(1-exp(-vT)) ~ 5e-6 us
        v = 0.4
        model = aplab.TrapModel.continuum(0.0, 0.1, 1.0, dark_rate=v)
        stream = aplab.simulate_periods(config, model, 1_000_000, seed=16)
        extras, n_periods = aplab.extract_extra_intervals(stream)
        times = extras * config.tdc_cycle
        expect = config.dead_time_us + 1.0 / v - config.tdc_cycle / 2.0
        assert times.mean() == pytest.approx(expect, abs=0.01)
        assert times.std() == pytest.approx(1.0 / v, rel=0.01)

    def test_extras_match_analytic_mixture(self, config, truth_model):
        """KS distance between extras and the closed-form mixture CDF."""
        params = reference_sinhc_params(config)
        stream = aplab.simulate_periods(config, truth_model, 4_000_000,
                                        seed=17)
        hist = aplab.histogram_from_stream(stream)
        edges_model_time = np.arange(hist.n_bins + 1) * hist.bin_width
        shape = aplab.SinhcParams(C=params.C, gamma0=params.gamma0,
                                  delta=params.delta, v=0.0)
        ap_mass = np.array([aplab.trap_mass(shape, (0.0, e)) if e > 0 else 0.0
                            for e in edges_model_time])
        cdf = ap_mass + params.v * edges_model_time
        cdf /= cdf[-1]
        empirical = np.r_[0.0, np.cumsum(hist.counts)] / hist.n_total
        ks = np.max(np.abs(empirical - cdf))
        assert ks < 1.63 / math.sqrt(hist.n_total)

    def test_cascade_allows_multiple_extras(self, config):
        model = aplab.TrapModel.continuum(0.5, 0.5, 5.0, dark_rate=0.0,
                                          cascade_enabled=True)
        stream = aplab.simulate_periods(config, model, 20_000, seed=18)
        extras, n_periods = aplab.extract_extra_intervals(stream)
        assert n_periods == 20_000
        # with mass 0.5 and cascading, mean extras per period exceeds the
        # single-origin bound
        assert len(stream.intervals) - n_periods > 0.5 * n_periods

    def test_requires_positive_periods(self, config, truth_model):
        with pytest.raises(ValueError):
            aplab.simulate_periods(config, truth_model, 0, seed=1)


class TestDarkRateTuning:
    def test_round_trip_p_ad(self, config):
        v = aplab.dark_rate_for_p_ad(config, 0.0087, 0.0113)
        assert 5e-5 < v < 8e-5
        # closed-form inversion: plugging v back reproduces p_ad
        span = (config.period_cycles - 2 * config.dead_time_cycles + 1) \
            * config.tdc_cycle
        p_ad = 1.0 - (1.0 - 0.0087) * math.exp(-v * span)
        assert p_ad == pytest.approx(0.0113, rel=1e-12)

    def test_pure_afterpulse_edge(self, config):
        assert aplab.dark_rate_for_p_ad(config, 0.01, 0.01) == 0.0
