"""Closed-form waiting-time density models for afterpulse analysis.

Three model families describe the probability density of the delay between
a detector avalanche and the next spurious count (afterpulse or dark count),
all in units of counts per microsecond with time in microseconds:

* a finite sum of exponentials, one term per discrete trap level,
* a log-uniform continuum of trap lifetimes, which integrates to a
  "hyperbolic sinc" shape  2*C*sinh(delta*t)/t * exp(-gamma0*t) + v,
* a shifted power law  D/(t + t_d)**alpha + v.

The continuum family is parametrized by the mean decay rate ``gamma0`` and
half-spread ``delta`` of the limiting rates; ``tau_min = 1/(gamma0+delta)``
and ``tau_max = 1/(gamma0-delta)`` are the corresponding lifetime limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError

MULTI_EXP = "multi_exp"
SINHC = "sinhc"
POWER_LAW = "power_law"

FAMILIES = (MULTI_EXP, SINHC, POWER_LAW)


@dataclass(frozen=True)
class MultiExpParams:
    """Sum-of-exponentials density: sum_i u_i/tau_i * exp(-t/tau_i) + v.

    ``components`` is a tuple of (u_i, tau_i) pairs with weights u_i > 0
    (dimensionless per-avalanche release masses) and lifetimes tau_i in
    microseconds, kept in strictly increasing tau order.  ``v`` is the flat
    dark-count density in counts/us.
    """

    components: tuple
    v: float = 0.0

    def __post_init__(self):
        if not self.components:
            raise ConfigError("multi-exp model needs at least one component")
        comps = tuple((float(u), float(tau)) for u, tau in self.components)
        object.__setattr__(self, "components", comps)
        taus = [tau for _, tau in comps]
        if any(u <= 0 for u, _ in comps) or any(tau <= 0 for tau in taus):
            raise ConfigError("component masses and lifetimes must be positive")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigError("lifetimes must be strictly increasing")
        if self.v < 0:
            raise ConfigError("dark density v must be >= 0")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def u(self):
        return np.array([u for u, _ in self.components])

    @property
    def tau(self):
        return np.array([tau for _, tau in self.components])

    @property
    def total_mass(self):
        return float(self.u.sum())

    @property
    def param_names(self):
        n = self.n_components
        return tuple(f"u{i+1}" for i in range(n)) + \
            tuple(f"tau{i+1}" for i in range(n)) + ("v",)


@dataclass(frozen=True)
class SinhcParams:
    """Log-uniform lifetime continuum: 2*C*sinh(delta*t)/t * exp(-gamma0*t) + v.

    C is the level-density scale (dimensionless), gamma0 and delta are in
    1/us with 0 < delta < gamma0, v in counts/us.
    """

    C: float
    gamma0: float
    delta: float
    v: float = 0.0

    def __post_init__(self):
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if not 0 < self.delta < self.gamma0:
            raise ConfigError("need 0 < delta < gamma0")
        if self.v < 0:
            raise ConfigError("dark density v must be >= 0")

    @property
    def rate_lo(self):
        """Slowest decay rate gamma0 - delta (belongs to tau_max)."""
        return self.gamma0 - self.delta

    @property
    def rate_hi(self):
        """Fastest decay rate gamma0 + delta (belongs to tau_min)."""
        return self.gamma0 + self.delta

    @property
    def tau_min(self):
        return 1.0 / self.rate_hi

    @property
    def tau_max(self):
        return 1.0 / self.rate_lo

    @property
    def total_mass(self):
        """Integral of the afterpulse term over (0, inf): C*ln(tau_max/tau_min)."""
        return self.C * math.log(self.rate_hi / self.rate_lo)

    @classmethod
    def from_limits(cls, C, tau_min, tau_max, v=0.0):
        gamma0, delta = limits_to_rates(tau_min, tau_max)
        return cls(C=C, gamma0=gamma0, delta=delta, v=v)

    @property
    def param_names(self):
        return ("C", "gamma0", "delta", "v")


@dataclass(frozen=True)
class PowerLawParams:
    """Shifted power law: D/(t + t_d)**alpha + v.

    D in us**(alpha-1), alpha dimensionless, t_d in us (instrument offset),
    v in counts/us.
    """

    D: float
    alpha: float
    t_d: float
    v: float = 0.0

    def __post_init__(self):
        if self.D <= 0 or self.alpha <= 0:
            raise ConfigError("D and alpha must be positive")
        if self.t_d < 0 or self.v < 0:
            raise ConfigError("t_d and v must be >= 0")

    @property
    def param_names(self):
        return ("D", "alpha", "t_d", "v")


def family_of(params):
    """Family tag string for a parameter object."""
    if isinstance(params, MultiExpParams):
        return MULTI_EXP
    if isinstance(params, SinhcParams):
        return SINHC
    if isinstance(params, PowerLawParams):
        return POWER_LAW
    raise TypeError(f"not a model parameter object: {params!r}")


def multi_exp_pdf(t, p: MultiExpParams):
    """Evaluate the sum-of-exponentials density at times ``t`` (us)."""
    t = np.asarray(t, dtype=float)
    u, tau = p.u, p.tau
    terms = (u / tau)[:, None] * np.exp(-t.ravel()[None, :] / tau[:, None])
    out = terms.sum(axis=0) + p.v
    return out.reshape(t.shape) if t.shape else float(out[0])


def _sinhc_core(t, C, gamma0, delta):
    """Afterpulse term of the continuum density, stable for all delta*t.

    Written as C*exp(-(gamma0-delta)*t)*(1-exp(-2*delta*t))/t, which avoids
    both sinh overflow at large delta*t and cancellation at small delta*t
    (expm1 keeps full precision).  The removable singularity at t=0 equals
    2*C*delta.
    """
    t = np.asarray(t, dtype=float)
    ts = np.where(t > 0, t, 1.0)  # placeholder to keep /t finite
    core = C * np.exp(-(gamma0 - delta) * ts) * (-np.expm1(-2.0 * delta * ts)) / ts
    return np.where(t > 0, core, 2.0 * C * delta)


def sinhc_pdf(t, p: SinhcParams):
    """Evaluate the continuum ("hyperbolic sinc") density at times ``t`` (us)."""
    t = np.asarray(t, dtype=float)
    out = _sinhc_core(t, p.C, p.gamma0, p.delta) + p.v
    return out.reshape(t.shape) if t.shape else float(out)


def power_law_pdf(t, p: PowerLawParams):
    """Evaluate the shifted power-law density at times ``t`` (us)."""
    t = np.asarray(t, dtype=float)
    out = p.D * (t + p.t_d) ** (-p.alpha) + p.v
    return out.reshape(t.shape) if t.shape else float(out)


def model_pdf(t, params):
    """Dispatch to the density of the family ``params`` belongs to."""
    fam = family_of(params)
    if fam == MULTI_EXP:
        return multi_exp_pdf(t, params)
    if fam == SINHC:
        return sinhc_pdf(t, params)
    return power_law_pdf(t, params)


def limits_to_rates(tau_min, tau_max):
    """Convert lifetime limits to (gamma0, delta) rate parameters.

    gamma0 = (1/tau_min + 1/tau_max)/2, delta = (1/tau_min - 1/tau_max)/2.
    Inverse of :func:`rates_to_limits`.
    """
    if not 0 < tau_min < tau_max:
        raise ConfigError("need 0 < tau_min < tau_max")
    hi, lo = 1.0 / tau_min, 1.0 / tau_max
    return (hi + lo) / 2.0, (hi - lo) / 2.0


def rates_to_limits(gamma0, delta):
    """Convert (gamma0, delta) back to (tau_min, tau_max)."""
    if not 0 < delta < gamma0:
        raise ConfigError("need 0 < delta < gamma0")
    return 1.0 / (gamma0 + delta), 1.0 / (gamma0 - delta)


def discretize_continuum(p: SinhcParams, N: int) -> MultiExpParams:
    """Midpoint-rule discretization of the continuum into N exponentials.

    Lifetimes are log-spaced midpoints on [tau_min, tau_max]; every component
    carries an equal share of the total mass C*ln(tau_max/tau_min), so the
    mass is preserved exactly for any N.  As N grows the resulting
    multi-exponential density converges pointwise to the continuum density.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    log_lo, log_hi = math.log(p.tau_min), math.log(p.tau_max)
    mids = log_lo + (np.arange(N) + 0.5) * (log_hi - log_lo) / N
    taus = np.exp(mids)
    u_each = p.total_mass / N
    return MultiExpParams(
        components=tuple((u_each, float(tau)) for tau in taus), v=p.v
    )


def trap_mass(params, window):
    """Integral of the afterpulse (non-dark) term over ``window=(t_a, t_b)``.

    Closed forms per family; ``t_b`` may be ``inf``.  For the continuum the
    primitive involves the exponential integral E1; for the power law the
    alpha == 1 case falls back to the logarithmic branch and the integral to
    infinity diverges for alpha <= 1.
    """
    t_a, t_b = window
    if not (0 <= t_a < t_b):
        raise ValueError("need 0 <= t_a < t_b")
    fam = family_of(params)
    if fam == MULTI_EXP:
        u, tau = params.u, params.tau
        hi = np.exp(-t_a / tau)
        lo = np.exp(-t_b / tau) if np.isfinite(t_b) else np.zeros_like(tau)
        return float((u * (hi - lo)).sum())
    if fam == SINHC:
        lo_rate, hi_rate = params.rate_lo, params.rate_hi

        def primitive(t):
            # integral from t to inf of the afterpulse term
            if t == 0:
                return params.C * math.log(hi_rate / lo_rate)
            if not np.isfinite(t):
                return 0.0
            return params.C * (special.exp1(lo_rate * t) - special.exp1(hi_rate * t))

        return primitive(t_a) - primitive(t_b)
    # power law
    D, alpha, t_d = params.D, params.alpha, params.t_d
    if alpha == 1.0:
        if not np.isfinite(t_b):
            return math.inf
        return D * math.log((t_b + t_d) / (t_a + t_d))
    if not np.isfinite(t_b):
        if alpha <= 1.0:
            return math.inf
        return D * (t_a + t_d) ** (1.0 - alpha) / (alpha - 1.0)
    return D * ((t_a + t_d) ** (1.0 - alpha) - (t_b + t_d) ** (1.0 - alpha)) \
        / (alpha - 1.0)


def model_jacobian(t, params):
    """Gradient of the density w.r.t. the family's natural parameters.

    Returns an array of shape ``(len(t), n_params)`` with columns ordered as
    ``params.param_names``.  All derivatives are analytic; the dark-rate
    column is identically 1 for every family.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    fam = family_of(params)
    if fam == MULTI_EXP:
        u, tau = params.u, params.tau
        n = len(u)
        jac = np.empty((t.size, 2 * n + 1))
        decay = np.exp(-t[:, None] / tau[None, :])
        jac[:, :n] = decay / tau[None, :]
        jac[:, n:2 * n] = (u / tau**2)[None, :] * decay * (t[:, None] / tau[None, :] - 1.0)
        jac[:, 2 * n] = 1.0
        return jac
    if fam == SINHC:
        C, g0, dl = params.C, params.gamma0, params.delta
        jac = np.empty((t.size, 4))
        core = _sinhc_core(t, C, g0, dl)
        jac[:, 0] = core / C
        jac[:, 1] = -t * core
        # d/d(delta) = 2*C*cosh(delta*t)*exp(-gamma0*t), written as a sum of
        # decaying exponentials so it cannot overflow
        jac[:, 2] = C * (np.exp(-(g0 - dl) * t) + np.exp(-(g0 + dl) * t))
        jac[:, 3] = 1.0
        return jac
    D, alpha, t_d = params.D, params.alpha, params.t_d
    jac = np.empty((t.size, 4))
    base = (t + t_d) ** (-alpha)
    jac[:, 0] = base
    jac[:, 1] = -D * np.log(t + t_d) * base
    jac[:, 2] = -alpha * D * (t + t_d) ** (-alpha - 1.0)
    jac[:, 3] = 1.0
    return jac
