#  03_sinhc_vs_powerlaw.py
#
#  Head-to-head comparison of the lifetime-continuum ("hyperbolic sinc")
#  model and a shifted power law on the same dataset, with the residual
#  diagnostic that exposes where each model breaks.

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import aplab

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

config = aplab.DetectorConfig()
mass = 0.0087
dark = aplab.dark_rate_for_p_ad(config, mass, 0.0113)
model = aplab.TrapModel.continuum(mass, 0.017, 2.0, dark_rate=dark)

stream = aplab.simulate_periods(config, model, 20_000_000, seed=33)
hist = aplab.histogram_from_stream(stream)
print(f"{hist.n_extras} extra counts from 2e7 periods")

fits = {}
for family in ("sinhc", "power_law"):
    problem = aplab.FitProblem(histogram=hist, family=family)
    outcome = aplab.multistart_fit(problem, 10, seed=9)
    report = aplab.gof_report(hist, outcome.params, outcome.n_free_params)
    fits[family] = (outcome, report)
    print(f"{family:>10}: chi2/crit = {report.chi2_normalized:6.2f}   "
          f"1-R2 = {report.one_minus_r2:.2g}   P_a = {report.p_a * 100:.3f}%")

out_s, rep_s = fits["sinhc"]
print(f"recovered tau_min = {out_s.params.tau_min * 1000:.2f} ns, "
      f"tau_max = {out_s.params.tau_max * 1000:.0f} ns")

centers = hist.bin_centers
stride = 120
idx = np.arange(0, hist.n_bins, stride)

fig, axes = plt.subplots(2, 1, figsize=(7, 8), height_ratios=[2, 1])
density = hist.normalized / hist.bin_width
axes[0].loglog(centers[idx], density[idx], ".", ms=4, color="0.4",
               label="data (1 of 120 bins)")
for family, style in (("sinhc", "-"), ("power_law", "--")):
    params = fits[family][0].params
    q = aplab.model_probs(params, hist)
    axes[0].loglog(centers, q / hist.bin_width, style, lw=1.2, label=family)
axes[0].set(xlabel="waiting time (us)", ylabel="density (1/us)",
            title="Model comparison")
axes[0].legend()

# residuals of each fit with the binomial 2-sigma band (short times only)
show = centers < 0.8
for family, color in (("sinhc", "tab:blue"), ("power_law", "tab:red")):
    rep = fits[family][1]
    axes[1].plot(centers[show], rep.residuals[show] * 1e4, ".", ms=2,
                 color=color, label=f"{family} residuals")
rep = fits["sinhc"][1]
axes[1].plot(centers[show], rep.sigma_bounds[show] * 1e4, "k--", lw=0.8)
axes[1].plot(centers[show], -rep.sigma_bounds[show] * 1e4, "k--", lw=0.8,
             label="+/- 2 sigma")
axes[1].set(xlabel="waiting time (us)", ylabel="residual x 1e4")
axes[1].legend()
fig.tight_layout()
fig.savefig(OUT / "model_comparison.png", dpi=150)

for family in fits:
    aplab.io.write_residuals_csv(OUT / f"residuals_{family}.csv", hist,
                                 fits[family][1])
print(f"wrote {OUT / 'model_comparison.png'} and residual CSVs")
