"""Age-structured substance-use-disorder (SUD) mortality model.

The modeled quantity n(a, t) is the density of persons with SUD per year
of age, governed by the transport equation

    (d/da + d/dt) n = -mu(a) n + r(a) [N(a, t) - n],    n(0, t) = 0,

where mu(a) = mu0(a) + mu_d combines a Gompertz-Makeham-Siler baseline
with a constant drug-caused excess rate, r(a) is a two-component
gamma-mixture influx of new SUD cases, and N(a, t) is the general
population. Solutions are evaluated along characteristics a - t = const:
the survival exponents (integrals of mu0, mu_d, and r along a
characteristic segment) are analytic, and the remaining outer time
integrals use composite trapezoid quadrature with the same step used by
the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


def _ret(out):
    """Return a scalar for 0-d results, the array otherwise."""
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class AgeGrid:
    """Uniform age discretization shared by the model and the filter.

    Node j (0-based) sits at age a0 + j * delta_a.
    """

    a0: float
    delta_a: float
    n_a: int

    def __post_init__(self):
        if self.delta_a <= 0:
            raise ValueError("delta_a must be positive")
        if self.n_a < 2:
            raise ValueError("need at least two age nodes")
        if self.a0 < 0:
            raise ValueError("start age must be nonnegative")

    @property
    def ages(self) -> np.ndarray:
        return self.a0 + self.delta_a * np.arange(self.n_a)


@dataclass(frozen=True)
class MortalityParams:
    """Gompertz-Makeham-Siler baseline plus drug-caused excess rate.

    mu0(a) = gamma1 * exp(-lambda1 a) + gamma2 + lambda2 * exp(lambda2 (a - m_shift))

    Defaults are the 2010 United States male parameterization. The
    amplitudes gamma1, gamma2 may be zero (dropping a term); the decay
    rates and the shift must stay positive.
    """

    gamma1: float = 0.00258
    gamma2: float = 0.00037
    lambda1: float = 5.09657
    lambda2: float = 0.09040
    m_shift: float = 83.22956
    mu_d: float = 0.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma amplitudes must be nonnegative")
        if self.lambda1 <= 0 or self.lambda2 <= 0 or self.m_shift <= 0:
            raise ValueError("lambda1, lambda2 and m_shift must be positive")
        if self.mu_d < 0:
            raise ValueError("mu_d must be nonnegative")


@dataclass(frozen=True)
class InfluxParams:
    """Two-component gamma-mixture influx of new SUD cases.

    r(a) = [r1 f(a; alpha1, beta1) + r2 f(a; alpha2, beta2)] / 2
    """

    r1: float
    r2: float
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float

    def __post_init__(self):
        if self.r1 < 0 or self.r2 < 0:
            raise ValueError("influx amplitudes must be nonnegative")
        if min(self.alpha1, self.alpha2) <= 0 or min(self.beta1, self.beta2) <= 0:
            raise ValueError("gamma shape and rate parameters must be positive")


@dataclass(frozen=True)
class InitialCondition:
    """Gamma-shaped start density rho(a) = prevalence * n0_total * f(a; alpha0, beta0)."""

    n0_total: float
    prevalence: float
    alpha0: float
    beta0: float

    def __post_init__(self):
        if self.n0_total <= 0:
            raise ValueError("n0_total must be positive")
        if not 0 <= self.prevalence < 1:
            raise ValueError("prevalence must lie in [0, 1)")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Full parameter bundle for one model configuration.

    ``start_year`` anchors model time t = 0 on the population surface's
    calendar axis; ``dt`` is the step of the composite trapezoid rule
    used for the outer time integrals.
    """

    mortality: MortalityParams
    influx: InfluxParams
    initial: InitialCondition
    start_year: float = 0.0
    dt: float = 0.1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class DensityField:
    """SUD density sampled on an age grid at one instant.

    ``time`` is model time (years since simulation start); the values act
    as the start profile of the window the field anchors.
    """

    grid: AgeGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_a,):
            raise ValueError("values must match the grid size")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("density values must be finite and nonnegative")


# ---------------------------------------------------------------------------
# mortality and influx primitives

def baseline_mortality(a, p: MortalityParams):
    """Baseline (non-drug) mortality rate mu0(a), 1/year."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("age must be nonnegative")
    return _ret(p.gamma1 * np.exp(-p.lambda1 * a) + p.gamma2
                + p.lambda2 * np.exp(p.lambda2 * (a - p.m_shift)))


def total_mortality(a, p: MortalityParams):
    """Total mortality mu(a) = mu0(a) + mu_d, 1/year."""
    return _ret(baseline_mortality(a, p) + p.mu_d)


def gamma_pdf(a, alpha: float, beta: float):
    """Gamma density with shape alpha and rate beta, f(a) = beta^alpha a^(alpha-1) e^(-beta a) / Gamma(alpha)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    scalar = np.ndim(a) == 0
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(a < 0):
        raise ValueError("age must be nonnegative")
    out = np.zeros_like(a)
    pos = a > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.exp(alpha * math.log(beta) + (alpha - 1.0) * np.log(a[pos])
                          - beta * a[pos] - special.gammaln(alpha))
    if alpha == 1.0:
        out[~pos] = beta
    elif alpha < 1.0:
        out[~pos] = np.inf
    return float(out[0]) if scalar else out


def gamma_pdf_derivative(a, alpha: float, beta: float):
    """d/da of the gamma density, f(a) * ((alpha - 1)/a - beta)."""
    scalar = np.ndim(a) == 0
    a = np.atleast_1d(np.asarray(a, dtype=float))
    zero = a == 0
    if np.any(zero) and alpha < 2:
        raise ValueError("gamma density slope is singular at a = 0 for alpha < 2")
    f = np.asarray(gamma_pdf(a, alpha, beta))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = f * ((alpha - 1.0) / a - beta)
    if np.any(zero):
        out[zero] = beta * beta if alpha == 2.0 else 0.0
    return float(out[0]) if scalar else out


def gamma_mode(alpha: float, beta: float):
    """Age of the gamma density maximum, (alpha - 1) / beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if alpha <= 1:
        raise ValueError("the mode is interior only for alpha > 1")
    return (alpha - 1.0) / beta


def influx_rate(a, q: InfluxParams):
    """Influx rate r(a) of new SUD cases, 1/year."""
    return _ret(0.5 * (q.r1 * gamma_pdf(a, q.alpha1, q.beta1)
                       + q.r2 * gamma_pdf(a, q.alpha2, q.beta2)))


def influx_rate_derivative(a, q: InfluxParams):
    """Analytic d/da of influx_rate."""
    return _ret(0.5 * (q.r1 * gamma_pdf_derivative(a, q.alpha1, q.beta1)
                       + q.r2 * gamma_pdf_derivative(a, q.alpha2, q.beta2)))


def upper_incomplete_gamma(s: float, x):
    """Upper incomplete gamma integral of t^(s-1) e^(-t) from x to infinity."""
    if s <= 0:
        raise ValueError("shape must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("lower limit must be nonnegative")
    return _ret(special.gammaincc(s, x) * np.exp(special.gammaln(s)))


def influx_integral(s_lo, s_hi, offset, alpha: float, beta: float):
    """Exact integral of one normalized gamma component along a characteristic.

    Computes the integral of f(z + offset; alpha, beta) dz over
    [s_lo, s_hi], which reduces to a difference of regularized upper
    incomplete gamma values at the shifted endpoints.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    s_lo = np.asarray(s_lo, dtype=float)
    s_hi = np.asarray(s_hi, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if np.any(s_lo > s_hi):
        raise ValueError("segment must satisfy s_lo <= s_hi")
    if np.any(offset + s_lo < 0):
        raise ValueError("segment must stay at nonnegative ages")
    lo = beta * (offset + s_lo)
    hi = beta * (offset + s_hi)
    return _ret(special.gammaincc(alpha, lo) - special.gammaincc(alpha, hi))


def initial_density(a, ic: InitialCondition):
    """Start density rho(a), persons per year of age."""
    return _ret(ic.prevalence * ic.n0_total * gamma_pdf(a, ic.alpha0, ic.beta0))


def initial_density_derivative(a, ic: InitialCondition):
    """Analytic d/da of initial_density."""
    return _ret(ic.prevalence * ic.n0_total * gamma_pdf_derivative(a, ic.alpha0, ic.beta0))


# ---------------------------------------------------------------------------
# start profiles for a characteristic window

class AnalyticProfile:
    """Start profile backed by the closed-form gamma initial condition."""

    def __init__(self, ic: InitialCondition):
        self.ic = ic

    def value(self, a):
        return initial_density(a, self.ic)

    def slope(self, a):
        return initial_density_derivative(a, self.ic)


def lagrange_stencil(ages: np.ndarray, x: np.ndarray):
    """Cubic Lagrange interpolation stencil on an ascending uniform grid.

    Returns (idx, w, dw) with shapes (4, len(x)): node indices,
    interpolation weights, and weights of the first derivative, so that
    values[idx] * w summed over the first axis interpolates at x.
    """
    ages = np.asarray(ages, dtype=float)
    x = np.asarray(x, dtype=float)
    n = ages.size
    if n < 4:
        raise ValueError("stencil needs at least four grid nodes")
    step = ages[1] - ages[0]
    base = np.floor((x - ages[0]) / step).astype(int) - 1
    base = np.clip(base, 0, n - 4)
    idx = base[None, :] + np.arange(4)[:, None]
    xs = ages[idx]                                    # (4, nq)
    w = np.ones((4, x.size))
    dw = np.zeros((4, x.size))
    for k in range(4):
        others = [m for m in range(4) if m != k]
        denom = np.ones(x.size)
        for m in others:
            denom *= xs[k] - xs[m]
        num = np.ones(x.size)
        for m in others:
            num *= x - xs[m]
        w[k] = num / denom
        dsum = np.zeros(x.size)
        for m in others:
            part = np.ones(x.size)
            for l in others:
                if l != m:
                    part *= x - xs[l]
            dsum += part
        dw[k] = dsum / denom
    return idx, w, dw


class GridProfile:
    """Start profile interpolating node values with cubic Lagrange stencils."""

    def __init__(self, grid: AgeGrid, values: np.ndarray):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (grid.n_a,):
            raise ValueError("values must match the grid size")
        self._ages = grid.ages

    def _stencil(self, a):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if np.any(a < self._ages[0] - 1e-9) or np.any(a > self._ages[-1] + 1e-9):
            raise ValueError("query outside the profile's age range")
        return lagrange_stencil(self._ages, a)

    def value(self, a):
        idx, w, _ = self._stencil(a)
        return _ret(np.einsum("kq,kq->q", w, self.values[idx]))

    def slope(self, a):
        idx, _, dw = self._stencil(a)
        return _ret(np.einsum("kq,kq->q", dw, self.values[idx]))


# ---------------------------------------------------------------------------
# characteristic segment integrals

def mortality_segment_integral(w_lo, w_hi, p: MortalityParams):
    """Integral of total mortality mu0(w) + mu_d over an age segment.

    All three baseline terms integrate in closed form; this is the exact
    exponent of the survival factor along a characteristic.
    """
    w_lo = np.asarray(w_lo, dtype=float)
    w_hi = np.asarray(w_hi, dtype=float)
    g1 = p.gamma1 / p.lambda1 * (np.exp(-p.lambda1 * w_lo) - np.exp(-p.lambda1 * w_hi))
    g2 = (p.gamma2 + p.mu_d) * (w_hi - w_lo)
    g3 = np.exp(p.lambda2 * (w_hi - p.m_shift)) - np.exp(p.lambda2 * (w_lo - p.m_shift))
    return _ret(g1 + g2 + g3)


def influx_segment_integral(w_lo, w_hi, q: InfluxParams):
    """Integral of the influx rate r(w) over an age segment, via incomplete gammas."""
    w_lo = np.asarray(w_lo, dtype=float)
    w_hi = np.asarray(w_hi, dtype=float)
    i1 = special.gammaincc(q.alpha1, q.beta1 * w_lo) - special.gammaincc(q.alpha1, q.beta1 * w_hi)
    i2 = special.gammaincc(q.alpha2, q.beta2 * w_lo) - special.gammaincc(q.alpha2, q.beta2 * w_hi)
    return _ret(0.5 * (q.r1 * i1 + q.r2 * i2))


def survival_factor(w_lo, w_hi, p: MortalityParams, q: InfluxParams):
    """exp(-integral of mu + r) along a characteristic from age w_lo to w_hi."""
    return _ret(np.exp(-(mortality_segment_integral(w_lo, w_hi, p)
                         + influx_segment_integral(w_lo, w_hi, q))))


def time_grid(t: float, dt: float) -> np.ndarray:
    """Quadrature nodes covering [0, t] with spacing at most dt."""
    if t <= 0:
        return np.zeros(1)
    k = max(1, int(math.ceil(t / dt - 1e-12)))
    return np.linspace(0.0, t, k + 1)


def _trap_weights(s: np.ndarray) -> np.ndarray:
    if s.size < 2:
        return np.zeros_like(s)
    h = s[1] - s[0]
    w = np.full(s.size, h)
    w[0] = w[-1] = 0.5 * h
    return w


# ---------------------------------------------------------------------------
# characteristic solution and its time derivative

def characteristic_solution(a, t: float, params: ModelParams, population,
                            profile=None):
    """Closed-form solution n(a, t) from the start profile at t = 0.

    For a >= t the characteristic traces back to the start profile; for
    a < t it enters through the empty a = 0 boundary and only collects
    influx along the way. ``population`` must expose ``eval(age, year)``
    over the path (queried at calendar years start_year + s).
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(a_arr < 0):
        raise ValueError("age must be nonnegative")
    if profile is None:
        profile = AnalyticProfile(params.initial)
    mp, q = params.mortality, params.influx
    out = np.empty_like(a_arr)

    older = a_arr >= t
    if np.any(older):
        ao = a_arr[older]
        w0 = ao - t
        s = time_grid(t, params.dt)
        wts = _trap_weights(s)
        W = w0[:, None] + s[None, :]                       # ages along the path
        surv = survival_factor(W, ao[:, None], mp, q)
        npop = population.eval(W, params.start_year + s[None, :])
        drive = influx_rate(W, q) * npop * surv
        out[older] = (np.asarray(profile.value(w0)) * surv[:, 0]
                      + drive @ wts)
    if np.any(~older):
        for i in np.flatnonzero(~older):
            ai = a_arr[i]
            if ai == 0.0:
                out[i] = 0.0
                continue
            s = time_grid(ai, params.dt)
            wts = _trap_weights(s)
            surv = survival_factor(s, ai, mp, q)
            npop = population.eval(s, params.start_year + (t - ai) + s)
            out[i] = (influx_rate(s, q) * npop * surv) @ wts
    return _ret(out if np.ndim(a) else out[0])


def state_derivative(state: DensityField, t: float, params: ModelParams,
                     population, profile=None):
    """Time derivative of n at each grid node of ``state``.

    ``state`` anchors the characteristic window: its values act as the
    start profile at model time ``state.time`` and tau = t - state.time
    selects the branch per node (nodes with age >= tau trace back to the
    profile, younger nodes to the empty boundary). Pass ``profile`` to
    override the default interpolation of the stored node values, e.g.
    with an analytic profile when one is available.
    """
    tau = t - state.time
    if tau < 0:
        raise ValueError("evaluation time precedes the state's anchor")
    if profile is None:
        profile = GridProfile(state.grid, state.values)
    mp, q = params.mortality, params.influx
    ages = state.grid.ages
    out = np.empty(state.grid.n_a)

    older = ages >= tau
    if np.any(older):
        ao = ages[older]
        w0 = ao - tau
        s = time_grid(tau, params.dt)
        wts = _trap_weights(s)
        years = params.start_year + state.time + s          # calendar time along path
        W = w0[:, None] + s[None, :]
        surv = survival_factor(W, ao[:, None], mp, q)
        r_w0 = influx_rate(w0, q)
        mu_w0 = total_mortality(w0, mp)
        term1 = -(np.asarray(profile.slope(w0))
                  + np.asarray(profile.value(w0)) * (mu_w0 + r_w0)) * surv[:, 0]
        term2 = influx_rate(ao, q) * population.eval(ao, params.start_year + t)
        rW = influx_rate(W, q)
        muW = total_mortality(W, mp)
        npop = population.eval(W, years[None, :])
        integ = surv * (npop * (rW * (muW + rW) + influx_rate_derivative(W, q))
                        + population.eval_da(W, years[None, :]) * rW)
        out[older] = term1 + term2 - integ @ wts
    if np.any(~older):
        for i in np.flatnonzero(~older):
            ai = ages[i]
            if ai == 0.0:
                out[i] = 0.0
                continue
            s = time_grid(ai, params.dt)
            wts = _trap_weights(s)
            surv = survival_factor(s, ai, mp, q)
            ndot = population.eval_dt(s, params.start_year + (t - ai) + s)
            out[i] = (influx_rate(s, q) * ndot * surv) @ wts
    return out


def accumulate_deaths(density, params: ModelParams, window, grid: AgeGrid | None = None):
    """Per-node drug-caused deaths over a time window, per 1,000 persons.

    The overdose channel accumulates mu_d * n by explicit Euler steps of
    size params.dt (left endpoints), matching the filter's own forecast
    accumulation. ``density`` is either a DensityField (held constant
    over the window) or a callable t -> node values.
    """
    t_a, t_b = window
    if t_b < t_a:
        raise ValueError("window must satisfy t_a <= t_b")
    if isinstance(density, DensityField):
        grid = density.grid
        values = lambda _t: density.values
    else:
        if grid is None:
            raise ValueError("grid is required when density is a callable")
        values = density
    total = np.zeros(grid.n_a)
    if t_b == t_a:
        return total
    steps = max(1, int(math.ceil((t_b - t_a) / params.dt - 1e-12)))
    dt = (t_b - t_a) / steps
    mu_d = params.mortality.mu_d
    for k in range(steps):
        total += mu_d * np.asarray(values(t_a + k * dt)) * dt
    return total / 1000.0
