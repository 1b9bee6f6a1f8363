#  04_continuum_sampler.py
#
#  Two consistency checks of the lifetime-continuum machinery:
#  (a) waiting times sampled from the generative model reproduce the
#      closed-form density, and
#  (b) the midpoint discretization into N exponentials converges to the
#      continuum as N grows.

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import aplab

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

tau_min, tau_max = 0.017, 2.0
C = 0.0087 / np.log(tau_max / tau_min)
params = aplab.SinhcParams.from_limits(C, tau_min, tau_max, v=0.0)

# (a) sampler vs density: a unit-mass model draws the same conditional law
model = aplab.TrapModel.continuum(1.0, tau_min, tau_max)
rng = np.random.default_rng(12)
draws = aplab.sample_afterpulse_times(model, rng, 2_000_000)
print(f"sampled {len(draws)} waiting times, "
      f"mean {draws.mean():.4f} us")

edges = np.geomspace(1e-3, 30.0, 80)
observed, _ = np.histogram(draws, bins=edges)
total = aplab.trap_mass(params, (0.0, np.inf))
expected = np.array([aplab.trap_mass(params, (a, b)) / total
                     for a, b in zip(edges[:-1], edges[1:])])
centers = np.sqrt(edges[:-1] * edges[1:])
widths = np.diff(edges)

fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
axes[0].loglog(centers, observed / len(draws) / widths, ".", ms=5,
               label="sampled")
axes[0].loglog(centers, aplab.sinhc_pdf(centers, params) / total, "-",
               lw=1, label="closed form")
axes[0].set(xlabel="waiting time (us)", ylabel="density (1/us)",
            title="Sampler vs analytic density")
axes[0].legend()

# (b) discretization convergence on a time grid
t = np.geomspace(0.055, 40.0, 400)
truth = aplab.sinhc_pdf(t, params)
for n in (3, 10, 100):
    approx = aplab.multi_exp_pdf(t, aplab.discretize_continuum(params, n))
    axes[1].semilogx(t, approx / truth - 1.0, lw=1, label=f"N = {n}")
axes[1].axhline(0, color="k", lw=0.5)
axes[1].set(xlabel="time (us)", ylabel="relative deviation",
            title="Midpoint discretization error")
axes[1].legend()
fig.tight_layout()
fig.savefig(OUT / "continuum_checks.png", dpi=150)
print(f"wrote {OUT / 'continuum_checks.png'}")

for n in (10, 100, 1000):
    approx = aplab.multi_exp_pdf(t, aplab.discretize_continuum(params, n))
    err = np.max(np.abs(approx / truth - 1.0))
    print(f"N = {n:4d}: max relative deviation {err:.2e}")
