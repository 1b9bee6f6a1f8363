#  02_model_ladder.py
#
#  Fit growing sums of exponentials (N = 1..5) to one simulated dataset and
#  watch the goodness of fit improve while the estimated lifetimes keep
#  drifting -- the classic sign that no finite N is the physical truth.

from pathlib import Path

import numpy as np

import aplab

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

config = aplab.DetectorConfig()
mass = 0.0087
dark = aplab.dark_rate_for_p_ad(config, mass, 0.0113)
model = aplab.TrapModel.continuum(mass, 0.017, 2.0, dark_rate=dark)

stream = aplab.simulate_periods(config, model, 8_000_000, seed=7)
hist = aplab.histogram_from_stream(stream)
print(f"{hist.n_extras} extra counts from 8e6 periods\n")

print(f"{'N':>2} {'lifetimes (ns)':<42} {'chi2/crit':>9} "
      f"{'1-R2':>9} {'P_a %':>6} {'fails':>5}")
rows = []
for n in range(1, 6):
    problem = aplab.FitProblem(histogram=hist, family="multi_exp",
                               n_components=n)
    outcome = aplab.multistart_fit(problem, 10, seed=40 + n)
    report = aplab.gof_report(hist, outcome.params, outcome.n_free_params)
    taus = " ".join(f"{tau * 1000:7.1f}" for tau in outcome.params.tau)
    print(f"{n:>2} {taus:<42} {report.chi2_normalized:9.3g} "
          f"{report.one_minus_r2:9.2g} {report.p_a * 100:6.3f} "
          f"{outcome.failures:>5}")
    rows.append([n, report.chi2_normalized, report.one_minus_r2,
                 report.p_a])

np.savetxt(OUT / "model_ladder.csv", np.array(rows), delimiter=",",
           header="n_components,chi2_normalized,one_minus_r2,p_a")
print(f"\nwrote {OUT / 'model_ladder.csv'}")
print("note how every added exponential rescales the previous lifetimes;")
print("the continuum fit (demo 03) reaches the same quality with fewer "
      "parameters")
