"""Nonlinear least-squares estimation of waiting-time model parameters.

The fit minimizes ``sum_i w_i * (h_i - q_i(theta))**2`` where ``h_i`` is the
normalized histogram and ``q_i`` the model density at the bin center times
the bin width.  All parameters are positive, so the optimizer works on their
logarithms (no active-set logic needed) with a Levenberg-Marquardt loop that
only ever accepts SSE-decreasing steps.

Published tables built on this kind of fit report that repeated estimations
are closely spaced except for occasional failed starts; :func:`multistart_fit`
reproduces that protocol by running the solver from a heuristic start plus
randomized log-perturbations and reporting the failure count alongside the
best converged outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import models
from .errors import AllStartsFailedError, FitFailureError
from .extract import ResponseHistogram

GRAD_COSINE_TOL = 1e-10
SSE_REL_TOL = 1e-12
MAX_ITERATIONS = 500
_LAMBDA0, _LAMBDA_UP, _LAMBDA_DOWN, _LAMBDA_MAX = 1e-3, 7.0, 5.0, 1e13


@dataclass(frozen=True)
class FitProblem:
    """One model family to be fit to one histogram.

    ``n_components`` only applies to the multi-exponential family.  For the
    power law the offset ``t_d`` is treated as an instrument constant pinned
    to the histogram's trim offset unless ``free_power_t_d`` is set.
    ``bounds`` may override the default per-parameter (lower, upper) box,
    keyed by parameter name.
    """

    histogram: ResponseHistogram
    family: str
    n_components: int = 1
    bounds: Optional[dict] = None
    weighting: str = "uniform"
    sinhc_parametrization: str = "rates"
    free_power_t_d: bool = False

    def __post_init__(self):
        if self.family not in models.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.weighting not in ("uniform", "poisson"):
            raise ValueError("weighting must be 'uniform' or 'poisson'")
        if self.sinhc_parametrization not in ("rates", "times"):
            raise ValueError("sinhc_parametrization must be 'rates' or 'times'")


@dataclass
class FitOutcome:
    """Result of one (or the best of several) fit runs."""

    params: object
    sse: float
    converged: bool
    n_iterations: int
    start_index: int = 0
    failures: int = 0
    grad_cosine: float = math.nan
    sse_trace: list = field(default_factory=list)
    n_free_params: int = 0
    family: str = ""
    fingerprint: str = ""


class _Space:
    """Maps an unconstrained log-vector x to model probabilities per bin."""

    names: tuple

    def __init__(self, problem: FitProblem):
        hist = problem.histogram
        self.t = hist.bin_centers
        self.dt = hist.bin_width
        lb, ub = self.default_bounds(hist)
        if problem.bounds:
            for k, (lo, hi) in problem.bounds.items():
                if k not in self.names:
                    raise ValueError(f"unknown parameter {k!r}")
                i = self.names.index(k)
                lb[i], ub[i] = lo, hi
        if np.any(lb <= 0) or np.any(~np.isfinite(ub)):
            raise ValueError("bounds must be positive below and finite above")
        self.lb, self.ub = lb, ub

    def check_bounds(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.lb.shape:
            raise ValueError(f"expected {len(self.lb)} parameters, got {len(y)}")
        if np.any(y < self.lb) or np.any(y > self.ub):
            raise ValueError("initial parameters fall outside the bounds")
        return y

    def clip(self, x):
        return np.clip(x, np.log(self.lb), np.log(self.ub))

    # subclasses implement: default_bounds, probs_jac, to_params, from_params


class _MultiExpSpace(_Space):
    def __init__(self, problem):
        self.n = problem.n_components
        self.names = tuple(f"u{i+1}" for i in range(self.n)) + \
            tuple(f"tau{i+1}" for i in range(self.n)) + ("v",)
        super().__init__(problem)

    def default_bounds(self, hist):
        dt, t_w = hist.bin_width, hist.window_length
        lb = np.array([1e-12] * self.n + [dt / 100] * self.n + [1e-30])
        ub = np.array([1e2] * self.n + [1e2 * t_w] * self.n + [1e3 / dt])
        return lb, ub

    def probs_jac(self, x):
        y = np.exp(x)
        n = self.n
        u, tau, v = y[:n], y[n:2 * n], y[2 * n]
        t = self.t
        decay = np.exp(-t[:, None] / tau[None, :])
        q = (decay @ (u / tau) + v) * self.dt
        jac = np.empty((t.size, 2 * n + 1))
        jac[:, :n] = decay / tau[None, :]
        jac[:, n:2 * n] = decay * (u / tau**2)[None, :] * (t[:, None] / tau[None, :] - 1.0)
        jac[:, 2 * n] = 1.0
        jac *= self.dt * y[None, :]  # chain rule through x = log(y)
        return q, jac

    def to_params(self, x):
        y = np.exp(x)
        n = self.n
        u, tau = y[:n].copy(), y[n:2 * n].copy()
        order = np.argsort(tau, kind="stable")
        u, tau = u[order], tau[order]
        # lifetimes clipped onto the same bound can tie exactly; separate
        # them by one ulp so the canonical strict ordering holds
        for i in range(1, n):
            if tau[i] <= tau[i - 1]:
                tau[i] = np.nextafter(tau[i - 1], np.inf)
        comps = tuple((float(ui), float(ti)) for ui, ti in zip(u, tau))
        return models.MultiExpParams(components=comps, v=float(y[2 * n]))

    def from_params(self, p: models.MultiExpParams):
        if p.n_components != self.n:
            raise ValueError("component count mismatch")
        return np.concatenate([p.u, p.tau, [p.v]])


class _SinhcRatesSpace(_Space):
    """y = (C, delta, rate_lo, v) with gamma0 = rate_lo + delta.

    Both rates are unconstrained-positive, which encodes gamma0 > delta > 0
    without explicit inequality handling.
    """

    names = ("C", "delta", "rate_lo", "v")

    def default_bounds(self, hist):
        dt, t_w = hist.bin_width, hist.window_length
        return (np.array([1e-12, 1 / (1e4 * t_w), 1 / (1e4 * t_w), 1e-30]),
                np.array([1e6, 1e2 / dt, 1e2 / dt, 1e3 / dt]))

    def probs_jac(self, x):
        C, dl, rate_lo, v = np.exp(x)
        t = self.t
        e_lo = np.exp(-rate_lo * t)
        e_hi = np.exp(-(rate_lo + 2.0 * dl) * t)
        core = C * e_lo * (-np.expm1(-2.0 * dl * t)) / t
        q = (core + v) * self.dt
        d_g0 = -t * core                # against gamma0 at fixed delta
        d_dl = C * (e_lo + e_hi)        # against delta at fixed gamma0
        jac = np.empty((t.size, 4))
        jac[:, 0] = core / C
        jac[:, 1] = d_g0 + d_dl         # delta moves gamma0 = rate_lo + delta too
        jac[:, 2] = d_g0
        jac[:, 3] = 1.0
        jac *= self.dt * np.exp(x)[None, :]
        return q, jac

    def to_params(self, x):
        C, dl, rate_lo, v = np.exp(x)
        return models.SinhcParams(C=float(C), gamma0=float(rate_lo + dl),
                                  delta=float(dl), v=float(v))

    def from_params(self, p: models.SinhcParams):
        return np.array([p.C, p.delta, p.rate_lo, p.v])


class _SinhcTimesSpace(_Space):
    """y = (C, tau_min, gap, v) with tau_max = tau_min + gap."""

    names = ("C", "tau_min", "gap", "v")

    def default_bounds(self, hist):
        dt, t_w = hist.bin_width, hist.window_length
        return (np.array([1e-12, dt / 100, dt / 100, 1e-30]),
                np.array([1e6, 1e4 * t_w, 1e4 * t_w, 1e3 / dt]))

    def probs_jac(self, x):
        C, tau_min, gap, v = np.exp(x)
        tau_max = tau_min + gap
        rate_hi, rate_lo = 1.0 / tau_min, 1.0 / tau_max
        dl = (rate_hi - rate_lo) / 2.0
        t = self.t
        e_lo = np.exp(-rate_lo * t)
        e_hi = np.exp(-rate_hi * t)
        core = C * e_lo * (-np.expm1(-2.0 * dl * t)) / t
        q = (core + v) * self.dt
        d_g0 = -t * core
        d_dl = C * (e_lo + e_hi)
        # chain (gamma0, delta) -> (tau_min, gap)
        a, b = -1.0 / tau_min**2, -1.0 / tau_max**2
        jac = np.empty((t.size, 4))
        jac[:, 0] = core / C
        jac[:, 1] = d_g0 * (a + b) / 2.0 + d_dl * (a - b) / 2.0
        jac[:, 2] = d_g0 * b / 2.0 + d_dl * (-b) / 2.0
        jac[:, 3] = 1.0
        jac *= self.dt * np.exp(x)[None, :]
        return q, jac

    def to_params(self, x):
        C, tau_min, gap, v = np.exp(x)
        gamma0, dl = models.limits_to_rates(tau_min, tau_min + gap)
        return models.SinhcParams(C=float(C), gamma0=gamma0, delta=dl, v=float(v))

    def from_params(self, p: models.SinhcParams):
        return np.array([p.C, p.tau_min, p.tau_max - p.tau_min, p.v])


class _PowerLawSpace(_Space):
    def __init__(self, problem):
        self.free_t_d = problem.free_power_t_d
        self.t_d = problem.histogram.t_offset
        self.names = ("D", "alpha", "t_d", "v") if self.free_t_d \
            else ("D", "alpha", "v")
        super().__init__(problem)

    def default_bounds(self, hist):
        dt, t_w = hist.bin_width, hist.window_length
        if self.free_t_d:
            return (np.array([1e-12, 1e-2, dt / 100, 1e-30]),
                    np.array([1e6, 1e2, 1e3 * t_w, 1e3 / dt]))
        return (np.array([1e-12, 1e-2, 1e-30]),
                np.array([1e6, 1e2, 1e3 / dt]))

    def probs_jac(self, x):
        y = np.exp(x)
        if self.free_t_d:
            D, alpha, t_d, v = y
        else:
            (D, alpha, v), t_d = y, self.t_d
        t = self.t
        shifted = t + t_d
        base = shifted ** (-alpha)
        q = (D * base + v) * self.dt
        jac = np.empty((t.size, len(y)))
        jac[:, 0] = base
        jac[:, 1] = -D * np.log(shifted) * base
        if self.free_t_d:
            jac[:, 2] = -alpha * D * shifted ** (-alpha - 1.0)
        jac[:, -1] = 1.0
        jac *= self.dt * y[None, :]
        return q, jac

    def to_params(self, x):
        y = np.exp(x)
        if self.free_t_d:
            D, alpha, t_d, v = y
        else:
            (D, alpha, v), t_d = y, self.t_d
        return models.PowerLawParams(D=float(D), alpha=float(alpha),
                                     t_d=float(t_d), v=float(v))

    def from_params(self, p: models.PowerLawParams):
        if self.free_t_d:
            return np.array([p.D, p.alpha, p.t_d, p.v])
        return np.array([p.D, p.alpha, p.v])


def _make_space(problem: FitProblem) -> _Space:
    if problem.family == models.MULTI_EXP:
        return _MultiExpSpace(problem)
    if problem.family == models.SINHC:
        return (_SinhcRatesSpace(problem)
                if problem.sinhc_parametrization == "rates"
                else _SinhcTimesSpace(problem))
    return _PowerLawSpace(problem)


def _weights(problem: FitProblem):
    if problem.weighting == "uniform":
        return None
    return 1.0 / np.maximum(problem.histogram.counts, 1.0)


def model_probs(params, histogram: ResponseHistogram):
    """Per-bin expected probabilities: density at bin centers * bin width."""
    return models.model_pdf(histogram.bin_centers, params) * histogram.bin_width


def levenberg_marquardt(problem: FitProblem, init,
                        max_iterations: int = MAX_ITERATIONS) -> FitOutcome:
    """Damped least squares from a single starting point.

    ``init`` is a parameter object or a natural-parameter vector (must lie
    within the problem bounds).  The loop accepts only SSE-decreasing steps,
    retries singular normal equations with stronger damping, and stops when
    the gradient cosine drops below 1e-10, the relative SSE improvement of an
    accepted step falls below 1e-12, or the iteration cap is reached (in
    which case ``converged`` is False rather than an exception).
    """
    space = _make_space(problem)
    if hasattr(init, "param_names"):
        y0 = space.from_params(init)
    else:
        y0 = np.asarray(init, dtype=float)
    y0 = space.check_bounds(y0)
    x = np.log(y0)
    h = problem.histogram.normalized
    w = _weights(problem)

    def sse_of(q):
        r = h - q
        return float((r * r).sum() if w is None else (w * r * r).sum())

    q, jac = space.probs_jac(x)
    sse = sse_of(q)
    if not math.isfinite(sse):
        raise FitFailureError("model is not finite at the starting point")
    log_lb, log_ub = np.log(space.lb), np.log(space.ub)
    lam = _LAMBDA0
    trace = [sse]
    converged = False
    grad_cos = math.nan
    it = 0
    while it < max_iterations:
        it += 1
        resid = q - h
        if w is None:
            grad = jac.T @ resid
            a_mat = jac.T @ jac
            rnorm = math.sqrt(float(resid @ resid))
        else:
            wj = jac * w[:, None]
            grad = wj.T @ resid
            a_mat = wj.T @ jac
            rnorm = math.sqrt(float((w * resid * resid).sum()))
        # freeze coordinates pinned at a bound with the gradient pointing
        # outward; the rest get the full damped Gauss-Newton treatment
        free = ~(((x <= log_lb + 1e-12) & (grad > 0))
                 | ((x >= log_ub - 1e-12) & (grad < 0)))
        if not free.any():
            converged = True  # constrained stationary point
            break
        g_f = grad[free]
        a_f = a_mat[np.ix_(free, free)]
        col_norms = np.sqrt(np.maximum(np.diag(a_f), 1e-300))
        grad_cos = float(np.max(np.abs(g_f) / (col_norms * max(rnorm, 1e-300))))
        if grad_cos < GRAD_COSINE_TOL:
            converged = True
            break

        accepted = False
        diag = np.maximum(np.diag(a_f), 1e-300)
        while lam <= _LAMBDA_MAX:
            try:
                step_f = np.linalg.solve(a_f + lam * np.diag(diag), -g_f)
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_UP
                continue
            if not np.all(np.isfinite(step_f)):
                lam *= _LAMBDA_UP
                continue
            step = np.zeros_like(x)
            step[free] = step_f
            x_new = space.clip(x + step)
            q_new, jac_new = space.probs_jac(x_new)
            if not np.all(np.isfinite(q_new)):
                lam *= _LAMBDA_UP
                continue
            sse_new = sse_of(q_new)
            if sse_new < sse:
                rel_drop = (sse - sse_new) / sse if sse > 0 else 0.0
                x, q, jac, sse = x_new, q_new, jac_new, sse_new
                trace.append(sse)
                lam = max(lam / _LAMBDA_DOWN, 1e-14)
                accepted = True
                if rel_drop < SSE_REL_TOL:
                    converged = True
                break
            lam *= _LAMBDA_UP
        if not accepted:
            # damping exhausted: even an arbitrarily short descent step
            # cannot lower the SSE in floating point, so the achievable
            # relative change is below the tolerance
            converged = True
        if converged:
            break

    return FitOutcome(params=space.to_params(x), sse=sse, converged=converged,
                      n_iterations=it, grad_cosine=grad_cos, sse_trace=trace,
                      n_free_params=len(space.names), family=problem.family,
                      fingerprint=problem.histogram.fingerprint())


def _percentile_time(centers, weights, q):
    total = weights.sum()
    if total <= 0:
        return centers[-1]
    cdf = np.cumsum(weights)
    return float(centers[int(np.searchsorted(cdf, q * total))])


def init_heuristic(problem: FitProblem):
    """Data-driven starting parameters for each family.

    The dark level comes from the mean density over the last 5% of bins;
    waiting-time percentiles are computed after subtracting that baseline so
    lifetime scales reflect the afterpulse part alone.
    """
    hist = problem.histogram
    if hist.n_total <= 0:
        raise ValueError("histogram is empty")
    h = hist.normalized
    dt, t_w = hist.bin_width, hist.window_length
    centers = hist.bin_centers
    n_tail = max(1, hist.n_bins // 20)
    v0 = float(h[-n_tail:].mean() / dt)
    v0 = min(max(v0, 0.1 / (hist.n_total * t_w)), 0.9 / dt)
    excess = np.maximum(hist.counts - hist.n_total * v0 * dt, 0.0)
    if excess.sum() == 0:
        excess = hist.counts.astype(float)
    mass_ap = max(1.0 - v0 * t_w, 1e-3)

    if problem.family == models.MULTI_EXP:
        n = problem.n_components
        lo = 4.0 * dt
        hi = max(_percentile_time(centers, excess, 0.99), lo * 10)
        if n > 1:
            taus = np.geomspace(lo, hi, n)
        else:
            # the baseline-subtracted mean waiting time estimates a single
            # exponential's lifetime directly
            mean_t = float((centers * excess).sum() / excess.sum())
            taus = [min(max(mean_t, lo), hi)]
        comps = tuple((mass_ap / n, float(tau)) for tau in np.sort(taus))
        return models.MultiExpParams(components=comps, v=v0)
    if problem.family == models.SINHC:
        tau_min0 = hist.t_offset + dt / 2.0
        tau_max0 = _percentile_time(centers, excess, 0.95)
        if tau_max0 < 1.5 * tau_min0:
            tau_max0 = 10.0 * tau_min0
        C0 = mass_ap / math.log(tau_max0 / tau_min0)
        return models.SinhcParams.from_limits(C0, tau_min0, tau_max0, v=v0)
    t_d = hist.t_offset
    den0 = max(float(h[0] / dt - v0), 1e-3 * float(h[0] / dt))
    return models.PowerLawParams(D=den0 * (t_d + dt / 2.0), alpha=1.0,
                                 t_d=t_d, v=v0)


def multistart_fit(problem: FitProblem, n_starts: int, seed: int,
                   perturbation: float = 0.4,
                   max_iterations: int = MAX_ITERATIONS,
                   n_threads: int = 1) -> FitOutcome:
    """Best-of-``n_starts`` fit with randomized log-space restarts.

    Start 0 is the heuristic initialization; the rest multiply each
    parameter by exp(N(0, perturbation)).  Returns the lowest-SSE converged
    outcome (ties broken by start index) with ``failures`` counting starts
    that did not converge or landed more than 1% above the best SSE.  Raises
    :class:`AllStartsFailedError` if nothing converges.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    space = _make_space(problem)
    rng = np.random.default_rng(seed)
    x0 = np.log(space.check_bounds(space.from_params(init_heuristic(problem))))
    starts = [x0]
    for _ in range(n_starts - 1):
        starts.append(space.clip(x0 + rng.normal(0.0, perturbation, x0.size)))

    def run(k):
        try:
            out = levenberg_marquardt(problem, np.exp(starts[k]),
                                      max_iterations=max_iterations)
            out.start_index = k
            return out
        except Exception as exc:  # a start may fail outright (e.g. overflow)
            return exc

    if n_threads > 1 and n_starts > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, range(n_starts)))
    else:
        results = [run(k) for k in range(n_starts)]

    outcomes = [r for r in results if isinstance(r, FitOutcome)]
    best = None
    for out in outcomes:
        if out.converged and (best is None or out.sse < best.sse):
            best = out
    if best is None:
        diags = []
        for k, r in enumerate(results):
            if isinstance(r, FitOutcome):
                diags.append({"start": k, "converged": r.converged,
                              "sse": r.sse, "n_iterations": r.n_iterations,
                              "grad_cosine": r.grad_cosine})
            else:
                diags.append({"start": k, "error": repr(r)})
        raise AllStartsFailedError(
            f"none of {n_starts} starts converged", diags)
    failures = 0
    for r in results:
        if not isinstance(r, FitOutcome) or not r.converged \
                or r.sse > 1.01 * best.sse:
            failures += 1
    best.failures = failures
    return best
