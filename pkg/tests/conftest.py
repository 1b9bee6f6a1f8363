"""Shared fixtures: the reference detector setup and cached datasets.

The "reference" truth is a log-uniform lifetime continuum with
tau_min = 17 ns, tau_max = 2000 ns and afterpulse mass 0.87% per avalanche,
with the dark rate tuned so that 1.13% of periods contain an extra count.
Session-scoped datasets are built lazily so fast unit tests never pay for
them.
"""

import time

import numpy as np
import pytest

import aplab

REFERENCE_TAU_MIN = 0.017
REFERENCE_TAU_MAX = 2.0
REFERENCE_MASS = 0.0087
REFERENCE_P_AD = 0.0113

SEED_DATA1 = 20101
FULL_SCALE_BLOCKS = 25  # 25 x 2e7 periods = one full-length recorded sample
PERIODS_DATA1 = 20_000_000


def reference_model(config):
    dark = aplab.dark_rate_for_p_ad(config, REFERENCE_MASS, REFERENCE_P_AD)
    return aplab.TrapModel.continuum(REFERENCE_MASS, REFERENCE_TAU_MIN,
                                     REFERENCE_TAU_MAX, dark_rate=dark)


def reference_sinhc_params(config=None):
    cfg = config or aplab.DetectorConfig()
    C = REFERENCE_MASS / np.log(REFERENCE_TAU_MAX / REFERENCE_TAU_MIN)
    dark = aplab.dark_rate_for_p_ad(cfg, REFERENCE_MASS, REFERENCE_P_AD)
    return aplab.SinhcParams.from_limits(C, REFERENCE_TAU_MIN,
                                         REFERENCE_TAU_MAX, v=dark)


@pytest.fixture(scope="session")
def config():
    return aplab.DetectorConfig()


@pytest.fixture(scope="session")
def truth_model(config):
    return reference_model(config)


@pytest.fixture(scope="session")
def midsize_histogram(config, truth_model):
    """2e6-period dataset for moderately expensive fit tests."""
    stream = aplab.simulate_periods(config, truth_model, 2_000_000, seed=777)
    return aplab.histogram_from_stream(stream)


@pytest.fixture(scope="session")
def data1(config, truth_model):
    """The 2e7-period dataset plus the wall time spent producing it."""
    t0 = time.perf_counter()
    stream = aplab.simulate_periods(config, truth_model, PERIODS_DATA1,
                                    seed=SEED_DATA1)
    hist = aplab.histogram_from_stream(stream)
    return hist, time.perf_counter() - t0


@pytest.fixture(scope="session")
def data_full(config, truth_model, data1):
    """The dataset of data1 extended to full recorded-sample scale.

    Independent seed blocks are merged up to 25 x 2e7 = 5e8 periods, the
    length of one full recorded sample, which is the scale the published
    goodness-of-fit magnitudes refer to.
    """
    hist = data1[0]
    for k in range(1, FULL_SCALE_BLOCKS):
        stream = aplab.simulate_periods(config, truth_model, PERIODS_DATA1,
                                        seed=SEED_DATA1 + k)
        hist = aplab.merge_histograms(hist, aplab.histogram_from_stream(stream))
    return hist
