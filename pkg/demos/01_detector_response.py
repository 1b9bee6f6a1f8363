#  01_detector_response.py
#
#  Simulate a pulsed-illumination run of a single-photon detector with a
#  known afterpulse model, extract the waiting-time histogram, and compare
#  it against the generating density.

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import aplab

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# detector timing: 40 us period at 2.5 ns TDC resolution, 45 ns dead time,
# first 22 bins trimmed (dead time + recovery region)
config = aplab.DetectorConfig()

# afterpulse truth: log-uniform lifetime continuum between 17 ns and 2 us
# carrying 0.87% release probability per avalanche; the dark rate is tuned
# so ~1.13% of periods contain an extra count
mass, tau_min, tau_max = 0.0087, 0.017, 2.0
dark = aplab.dark_rate_for_p_ad(config, mass, 0.0113)
model = aplab.TrapModel.continuum(mass, tau_min, tau_max, dark_rate=dark)
print(f"dark rate: {dark * 1e6:.1f} counts/s")

n_periods = 4_000_000
stream = aplab.simulate_periods(config, model, n_periods, seed=2025)
print(f"simulated {n_periods} periods -> {len(stream.intervals)} intervals")

hist = aplab.histogram_from_stream(stream)
print(f"extra counts: {hist.n_extras} (fraction {hist.p_ad_hat:.5f}), "
      f"{hist.n_total} inside the kept window of {hist.n_bins} bins")

# the analytic density the histogram should approach, in conditional units
C = mass / np.log(tau_max / tau_min)
params = aplab.SinhcParams.from_limits(C, tau_min, tau_max, v=dark)
q = aplab.model_probs(params, hist)
conditional_density = q / q.sum() / hist.bin_width

aplab.io.write_histogram_csv(OUT / "response_histogram.csv", hist)

# decimate for plotting, one point of every 120
stride = 120
idx = np.arange(0, hist.n_bins, stride)
centers = hist.bin_centers

fig, ax = plt.subplots(figsize=(7, 5))
density = hist.normalized / hist.bin_width
ax.semilogy(centers[idx], density[idx], ".", ms=4, label="simulated counts")
ax.semilogy(centers, conditional_density, "-", lw=1,
            label="generating density")
ax.set(xlabel="waiting time after trim (us)",
       ylabel="probability density (1/us)",
       title="Detector response to pulsed illumination")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "response_histogram.png", dpi=150)
print(f"wrote {OUT / 'response_histogram.png'}")
