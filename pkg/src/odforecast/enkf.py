"""Perturbed-observation ensemble Kalman filter over the augmented state.

Each ensemble member stacks the density n at every age node, the
accumulated drug-caused deaths per node (normalized per 1,000 persons),
and the logarithms of the seven model parameters:

    [n(a_1..a_Na), D(a_1..a_Na), log mu_d, log r1, log r2,
     log alpha1, log beta1, log alpha2, log beta2]

Members advance by explicit Euler steps of the closed-form rate
expressions; once a year the ensemble is updated with the observed
per-bin fatality counts through the standard perturbed-observation
Kalman gain, the drug-caused mortality entry is re-anchored to the
observed deaths over the ensemble's person-year exposure, and the death
accumulators are reset so the next measurement covers its own year.

Observed counts and model sums are compared in a common normalization:
node values carry deaths per year of age per 1,000 persons, so a bin
count maps to count / (1000 * delta_a).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

from . import rng
from .ingest import AgeBinScheme, ObservationSeries
from .model import (AgeGrid, ModelParams, initial_density, lagrange_stencil,
                    time_grid, _trap_weights)

N_PARAMS = 7
PARAM_NAMES = ("mu_d", "r1", "r2", "alpha1", "beta1", "alpha2", "beta2")


@dataclass(frozen=True)
class FilterConfig:
    """Filter discretization, noise levels, and measurement window."""

    ensemble_size: int = 1000
    dt: float = 0.1
    grid: AgeGrid = field(default_factory=lambda: AgeGrid(0.0, 1.2, 101))
    state_var: float = 1e-4          # initial variance of n and D entries
    param_var: float = 1.0           # initial variance of log mu_d, log r1, log r2
    shape_var: float = 0.04          # initial variance of log alpha1/beta1/alpha2/beta2
    process_noise: float = 1e-4      # scale of Q
    process_noise_kind: str = "diag" # "diag": Q = scale * I; "ones": scale * (matrix of ones)
    obs_noise: float = 2e-3          # R diagonal
    anchor_spread: float = 0.1       # log-space spread left on mu_d by re-anchoring
    warmup_cycles: int = 2
    measure_lo: float = 10.0
    measure_hi: float = 70.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("need at least two ensemble members")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.process_noise < 0 or self.obs_noise < 0 or self.anchor_spread < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.process_noise_kind not in ("ones", "diag"):
            raise ValueError("process_noise_kind must be 'ones' or 'diag'")

    @property
    def state_dim(self) -> int:
        return 2 * self.grid.n_a + N_PARAMS

    @property
    def count_scale(self) -> float:
        """Persons per unit of a node-summed death value."""
        return 1000.0 * self.grid.delta_a

    @property
    def steps_per_year(self) -> int:
        return max(1, int(round(1.0 / self.dt)))


@dataclass
class Ensemble:
    """Member states plus the anchor of the running characteristic window."""

    members: np.ndarray            # (M, 2*Na + 7)
    time: float                    # model years since simulation start
    window_start: float            # model time the window profiles were frozen
    window_profiles: np.ndarray    # (M, Na) densities at window_start
    exposure: np.ndarray           # (M,) person-years in the measured ages this year

    @property
    def size(self) -> int:
        return self.members.shape[0]


@dataclass
class ObservationVector:
    """Per-bin annual deaths in the filter's per-1,000 normalization.

    ``values[l]`` compares directly against the sum of per-node death
    accumulators over bin l; masked bins are excluded from the update.
    """

    values: np.ndarray
    scheme: AgeBinScheme
    mask: np.ndarray               # True = usable


def split_state(members: np.ndarray, n_a: int):
    """Views of the density, death, and log-parameter blocks."""
    return members[..., :n_a], members[..., n_a:2 * n_a], members[..., 2 * n_a:]


def measure_matrix(grid: AgeGrid, scheme: AgeBinScheme) -> np.ndarray:
    """(n_bins, n_a) matrix summing death nodes into observation bins.

    Node membership follows the node's own age; every bin must contain
    at least one node.
    """
    ages = grid.ages
    mat = np.zeros((scheme.n_bins, grid.n_a))
    for l, (lo, hi) in enumerate(scheme.bins):
        sel = (ages >= lo) & (ages < hi)
        if not sel.any():
            raise ValueError(f"observation bin [{lo}, {hi}) contains no model nodes")
        mat[l, sel] = 1.0
    return mat


def window_mask(scheme: AgeBinScheme, lo: float, hi: float) -> np.ndarray:
    """Bins lying entirely inside the measured age window [lo, hi]."""
    return np.array([blo >= lo and bhi <= hi for blo, bhi in scheme.bins])


def measure(member: np.ndarray, scheme: AgeBinScheme, grid: AgeGrid,
            measure_lo: float = 10.0, measure_hi: float = 70.0) -> ObservationVector:
    """Coarse-grain one member's death block into observation bins."""
    mat = measure_matrix(grid, scheme)
    _, deaths, _ = split_state(np.asarray(member, dtype=float), grid.n_a)
    return ObservationVector(values=mat @ deaths, scheme=scheme,
                             mask=window_mask(scheme, measure_lo, measure_hi))


# ---------------------------------------------------------------------------
# ensemble statistics and the generic update core

def ensemble_mean_cov(members: np.ndarray):
    """Sample mean and covariance over the member axis (rows)."""
    m = members.shape[0]
    mean = members.mean(axis=0)
    dev = members - mean
    return mean, dev.T @ dev / (m - 1)

def ensemble_cross_cov(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sample cross covariance between two member-by-component blocks."""
    m = a.shape[0]
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    return da.T @ db / (m - 1)


def _solve_gain(p_xz: np.ndarray, p_zz: np.ndarray) -> np.ndarray:
    """Kalman gain p_xz p_zz^{-1} via SPD solve, eigenvalue fallback."""
    try:
        c, low = linalg.cho_factor(p_zz)
        return linalg.cho_solve((c, low), p_xz.T).T
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(p_zz)
        thresh = 1e-12 * max(np.trace(p_zz), np.finfo(float).tiny)
        inv = np.where(vals > thresh, 1.0 / np.maximum(vals, thresh), 0.0)
        return p_xz @ (vecs * inv) @ vecs.T


def perturbed_obs_update(members: np.ndarray, h_values: np.ndarray,
                         z: np.ndarray, r_diag: np.ndarray,
                         eta: np.ndarray) -> np.ndarray:
    """Kalman update of every member with its own perturbed observation.

    ``h_values`` holds h(member) rows, ``eta`` the measurement-noise
    draws (same shape). Returns the updated member matrix.
    """
    m = members.shape[0]
    z_mean = h_values.mean(axis=0)
    dz = h_values - z_mean
    p_zz = dz.T @ dz / (m - 1) + np.diag(r_diag)
    p_xz = (members - members.mean(axis=0)).T @ dz / (m - 1)
    gain = _solve_gain(p_xz, p_zz)
    return members + (z + eta - h_values) @ gain.T


# ---------------------------------------------------------------------------
# the vectorized closed-form rate kernel

def _density_rates_block(values, profiles, params_log, tau, t_window, template,
                         population, grid, stencil):
    """Density-block time derivatives for a block of members.

    ``values``/``profiles`` are (m, Na); ``params_log`` is (m, 7). The
    first node (empty boundary) is pinned to zero. Shapes follow the
    window branch with node age >= tau; yearly windows with tau below
    the grid step guarantee that for every interior node.
    """
    mp = template.mortality
    ages = grid.ages
    na = ages.size - 1
    aj = ages[1:]
    if tau >= grid.delta_a:
        raise ValueError("window time exceeds the age step; refresh the window")

    p = np.exp(params_log)
    mu_d = p[:, 0:1]
    r1, r2 = p[:, 1:2, None], p[:, 2:3, None]
    a1, b1 = p[:, 3:4, None], p[:, 4:5, None]
    a2, b2 = p[:, 5:6, None], p[:, 6:7, None]

    s = time_grid(tau, template.dt)
    wts = _trap_weights(s)
    w0 = aj - tau
    W = w0[:, None] + s[None, :]                      # (na, K) ages along paths
    years = template.start_year + t_window + s
    lnW = np.log(W)

    # member-independent pieces
    mu0_w = (mp.gamma1 * np.exp(-mp.lambda1 * W) + mp.gamma2
             + mp.lambda2 * np.exp(mp.lambda2 * (W - mp.m_shift)))
    mort0 = (mp.gamma1 / mp.lambda1 * (np.exp(-mp.lambda1 * W) - np.exp(-mp.lambda1 * aj[:, None]))
             + mp.gamma2 * (aj[:, None] - W)
             + np.exp(mp.lambda2 * (aj[:, None] - mp.m_shift)) - np.exp(mp.lambda2 * (W - mp.m_shift)))
    n_pop = population.eval(W, years[None, :])
    n_pop_da = population.eval_da(W, years[None, :])
    n_at = population.eval(aj, template.start_year + t_window + tau)
    mu0_w0 = mu0_w[:, 0]

    def comp(alpha, beta, amp, x, lnx):
        dens = np.exp(alpha * np.log(beta) + (alpha - 1.0) * lnx - beta * x
                      - special.gammaln(alpha))
        return 0.5 * amp * dens

    # influx rate, its age slope, and its segment integral along each path
    f1 = comp(a1, b1, r1, W, lnW)
    f2 = comp(a2, b2, r2, W, lnW)
    r_w = f1 + f2
    rp_w = f1 * ((a1 - 1.0) / W - b1) + f2 * ((a2 - 1.0) / W - b2)
    seg = (0.5 * r1 * (special.gammaincc(a1, b1 * W) - special.gammaincc(a1, b1 * aj[:, None]))
           + 0.5 * r2 * (special.gammaincc(a2, b2 * W) - special.gammaincc(a2, b2 * aj[:, None])))
    surv = np.exp(-(mort0 + mu_d[..., None] * (tau - s) + seg))

    # start-profile terms
    idx, w_interp, dw_interp = stencil
    pv = np.einsum("kq,mkq->mq", w_interp, profiles[:, idx])
    ps = np.einsum("kq,mkq->mq", dw_interp, profiles[:, idx])
    r_w0 = r_w[..., 0]
    term1 = -(ps + pv * (mu0_w0 + mu_d + r_w0)) * surv[..., 0]

    ln_aj = np.log(aj)
    term2 = (comp(a1[..., 0], b1[..., 0], r1[..., 0], aj, ln_aj)
             + comp(a2[..., 0], b2[..., 0], r2[..., 0], aj, ln_aj)) * n_at

    integ = surv * (n_pop * (r_w * (mu0_w + mu_d[..., None] + r_w) + rp_w)
                    + n_pop_da * r_w)
    rates = np.empty((values.shape[0], ages.size))
    rates[:, 0] = 0.0
    rates[:, 1:] = term1 + term2 - integ @ wts
    return rates


def _density_rates(values, profiles, params_log, tau, t_window, template,
                   population, grid, threads=1):
    stencil = lagrange_stencil(grid.ages, grid.ages[1:] - tau)
    m = values.shape[0]
    if threads <= 1 or m < 2 * threads:
        return _density_rates_block(values, profiles, params_log, tau, t_window,
                                    template, population, grid, stencil)
    bounds = np.linspace(0, m, threads + 1).astype(int)
    chunks = [(values[lo:hi], profiles[lo:hi], params_log[lo:hi])
              for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda c: _density_rates_block(c[0], c[1], c[2], tau, t_window,
                                           template, population, grid, stencil),
            chunks))
    return np.vstack(parts)


# ---------------------------------------------------------------------------
# filter operations

def build_initial_state(config: FilterConfig, params: ModelParams) -> np.ndarray:
    """Mean augmented state: start density, zero deaths, log parameters."""
    q = params.influx
    x0 = np.zeros(config.state_dim)
    x0[:config.grid.n_a] = initial_density(config.grid.ages, params.initial)
    logs = np.log([params.mortality.mu_d, q.r1, q.r2, q.alpha1, q.beta1, q.alpha2, q.beta2])
    x0[2 * config.grid.n_a:] = logs
    return x0


def init_ensemble(config: FilterConfig, x0: np.ndarray, draw_index: int = 0) -> Ensemble:
    """Gaussian ensemble around x0 with the configured initial covariance.

    Amplitude log-parameters (mu_d, r1, r2) start with ``param_var``;
    the gamma shape and rate log-parameters start with the tighter
    ``shape_var``, since a diffuse shape prior puts the influx peaks at
    physically absurd ages and its non-monotone measurement response
    stalls the linear-gain contraction.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (config.state_dim,):
        raise ValueError("x0 does not match the configured state dimension")
    na = config.grid.n_a
    std = np.empty(config.state_dim)
    std[:2 * na] = math.sqrt(config.state_var)
    std[2 * na:2 * na + 3] = math.sqrt(config.param_var)
    std[2 * na + 3:] = math.sqrt(config.shape_var)
    noise = rng.normal(config.seed, "init", draw_index, (config.ensemble_size, config.state_dim))
    members = x0 + std * noise
    members[:, :2 * na] = np.maximum(members[:, :2 * na], 0.0)
    return Ensemble(members=members, time=0.0, window_start=0.0,
                    window_profiles=members[:, :na].copy(),
                    exposure=np.zeros(config.ensemble_size))


def _process_noise(config: FilterConfig, step_index: int, m: int) -> np.ndarray:
    scale = math.sqrt(config.process_noise)
    if config.process_noise == 0.0:
        return np.zeros((m, 1))
    if config.process_noise_kind == "ones":
        return scale * rng.normal(config.seed, "process", step_index, (m, 1))
    return scale * rng.normal(config.seed, "process", step_index,
                              (m, 2 * config.grid.n_a + N_PARAMS))


def forecast_step(ens: Ensemble, params: ModelParams, population,
                  config: FilterConfig, step_index: int = 0,
                  measured_nodes: np.ndarray | None = None) -> Ensemble:
    """One Euler forecast step of size config.dt for every member.

    Parameters evolve only through process noise. Members whose rate
    evaluation turns non-finite are redrawn from the ensemble mean with
    fresh noise. Accumulates person-year exposure over ``measured_nodes``
    for the yearly re-anchoring.
    """
    na = config.grid.n_a
    members = ens.members.copy()
    n_blk, d_blk, p_blk = split_state(members, na)
    tau = ens.time - ens.window_start

    rates = _density_rates(n_blk, ens.window_profiles, p_blk, tau,
                           ens.window_start, params, population, config.grid,
                           threads=config.threads)
    mu_d = np.exp(p_blk[:, 0:1])
    death_rates = mu_d * n_blk / 1000.0

    bad = ~(np.isfinite(rates).all(axis=1) & np.isfinite(death_rates).all(axis=1))
    if bad.any():
        mean_state = members.mean(axis=0)
        redraw = rng.normal(config.seed, "redraw", step_index,
                            (int(bad.sum()), config.state_dim))
        members[bad] = mean_state + math.sqrt(config.process_noise) * redraw
        rates[bad] = 0.0
        death_rates[bad] = 0.0

    exposure = ens.exposure
    if measured_nodes is not None:
        exposure = exposure + config.dt * config.grid.delta_a * \
            n_blk[:, measured_nodes].sum(axis=1)

    noise = _process_noise(config, step_index, ens.size)
    members[:, :na] += config.dt * rates
    members[:, na:2 * na] += config.dt * death_rates
    members += noise                      # broadcasts over all components
    members[:, :2 * na] = np.maximum(members[:, :2 * na], 0.0)
    return Ensemble(members=members, time=ens.time + config.dt,
                    window_start=ens.window_start,
                    window_profiles=ens.window_profiles, exposure=exposure)


def update_step(ens: Ensemble, z: ObservationVector, config: FilterConfig,
                h_matrix: np.ndarray | None = None, draw_index: int = 0) -> Ensemble:
    """Perturbed-observation Kalman update with masked bins removed."""
    if h_matrix is None:
        h_matrix = measure_matrix(config.grid, z.scheme)
    keep = z.mask & np.isfinite(z.values)
    if not keep.any():
        return ens
    na = config.grid.n_a
    h_all = split_state(ens.members, na)[1] @ h_matrix.T
    h_kept = h_all[:, keep]
    r_diag = np.full(int(keep.sum()), config.obs_noise)
    eta = math.sqrt(config.obs_noise) * rng.normal(
        config.seed, "measurement", draw_index, h_kept.shape)
    members = perturbed_obs_update(ens.members.copy(), h_kept,
                                   z.values[keep], r_diag, eta)
    members[:, :2 * na] = np.maximum(members[:, :2 * na], 0.0)
    return replace(ens, members=members)


def anchor_mu_d(ens: Ensemble, observed_deaths: float, config: FilterConfig,
                n_used_bins: int, draw_index: int = 0) -> Ensemble:
    """Re-anchor each member's log mu_d to observed deaths over exposure.

    The anchored value estimates the year's average drug-caused rate:
    observed deaths (plus a measurement-noise draw, floored at one
    death) over the ensemble-mean person-year exposure in the measured
    ages. A second draw of width ``config.anchor_spread`` keeps an
    honest parameter uncertainty on the entry; collapsing it entirely
    would starve the next update of its main level channel and push
    innovations into the density block instead.
    """
    exposure = float(ens.exposure.mean())
    if exposure <= 0.0:
        return ens
    sigma_counts = math.sqrt(n_used_bins * config.obs_noise) * config.count_scale
    draws = rng.normal(config.seed, "anchor", draw_index, (2, ens.size))
    numer = np.maximum(observed_deaths + sigma_counts * draws[0], 1.0)
    members = ens.members.copy()
    members[:, 2 * config.grid.n_a] = np.log(numer / exposure) \
        + config.anchor_spread * draws[1]
    return replace(ens, members=members)


def annual_measurement_reset(ens: Ensemble) -> Ensemble:
    """Zero the death accumulators so the next measurement covers one year."""
    na = ens.window_profiles.shape[1]
    members = ens.members.copy()
    members[:, na:2 * na] = 0.0
    return replace(ens, members=members, exposure=np.zeros(ens.size))


def refresh_window(ens: Ensemble) -> Ensemble:
    """Freeze the current densities as the start profile of a new window.

    Also restarts the exposure accumulator, which always spans one
    window (one calendar year).
    """
    na = ens.window_profiles.shape[1]
    return replace(ens, window_start=ens.time,
                   window_profiles=ens.members[:, :na].copy(),
                   exposure=np.zeros(ens.size))


# ---------------------------------------------------------------------------
# assimilation driver

@dataclass
class YearParams:
    year: int
    mu_d: float
    sigma_mu_d: float
    r1: float
    sigma_r1: float
    r2: float
    sigma_r2: float
    a1max: float
    sigma_a1max: float
    a2max: float
    sigma_a2max: float


@dataclass
class BinPrediction:
    year: int
    age_lo: float
    age_hi: float
    predicted: float           # annual deaths, count units
    sigma: float               # 3-sigma bands are 3 * sigma
    observed: float | None
    forecast_only: bool


@dataclass
class AssimilationResult:
    parameters: list
    fit_bins: list             # observation-scheme rows for assimilated years
    display_bins: list         # display-scheme rows for all years
    last_observed_year: int | None
    first_year: int
    horizon: int


def _param_stats(members: np.ndarray, na: int):
    """Point estimates and spreads of the physical parameters.

    Rates use the arithmetic ensemble mean. The influx-peak ages are
    ratios of log-normal quantities whose arithmetic means are dominated
    by the upper tail, so their point estimates come from the geometric
    means of alpha and beta; the spread is still the member spread.
    """
    logs = members[:, 2 * na:]
    p = np.exp(logs)
    mu_d, r1, r2, a1, b1, a2, b2 = (p[:, i] for i in range(N_PARAMS))
    g = np.exp(logs.mean(axis=0))
    stats = []
    for c in (mu_d, r1, r2):
        stats.extend((float(c.mean()), float(c.std(ddof=1))))
    for shape_idx, rate_idx in ((3, 4), (5, 6)):
        point = (g[shape_idx] - 1.0) / g[rate_idx]
        spread = (p[:, shape_idx] - 1.0) / p[:, rate_idx]
        stats.extend((float(point), float(spread.std(ddof=1))))
    return stats


def run_assimilation(data: ObservationSeries | None, config: FilterConfig,
                     params: ModelParams, population,
                     horizon_year: int | None = None,
                     display_scheme: AgeBinScheme | None = None,
                     anchor: bool = True,
                     strict: bool = False) -> AssimilationResult:
    """Assimilate yearly fatality counts and forecast beyond the data.

    Runs from params.start_year through horizon_year: each year the
    ensemble is propagated in Euler steps, compared against that year's
    observed counts (prior prediction), updated, re-anchored, and reset.
    The first observed year is assimilated ``config.warmup_cycles``
    extra times up front to align the parameters, carrying only the
    parameter block into the main run. Years beyond the data are pure
    forecasts: no updates, no death-accumulator resets, so the reported
    sigma reflects the uncertainty accumulated since the last data year.
    With ``data=None`` the run is a pure simulation of the ensemble.
    """
    scheme = data.scheme if data is not None else None
    first_year = int(round(params.start_year))
    last_observed = int(data.years[-1]) if data is not None else None
    if horizon_year is None:
        horizon_year = last_observed if last_observed is not None else first_year
    if horizon_year < first_year:
        raise ValueError("horizon precedes the simulation start")

    na = config.grid.n_a
    h_matrix = measure_matrix(config.grid, scheme) if scheme is not None else None
    wmask = window_mask(scheme, config.measure_lo, config.measure_hi) \
        if scheme is not None else None
    display_matrix = measure_matrix(config.grid, display_scheme) \
        if display_scheme is not None else None
    node_in_window = (config.grid.ages >= config.measure_lo) & \
        (config.grid.ages < config.measure_hi)

    x0 = build_initial_state(config, params)

    def obs_for(year):
        if data is None or year not in data.years:
            return None
        usable = data.mask_for(year, strict=strict) & wmask
        if not usable.any():
            return None
        counts = data.row(year)
        values = np.where(usable, counts / config.count_scale, np.nan)
        return ObservationVector(values=values, scheme=scheme, mask=usable)

    def measured_nodes_for(z):
        if z is None:
            return node_in_window
        nodes = (h_matrix[z.mask & np.isfinite(z.values)].sum(axis=0) > 0)
        return nodes

    def run_year(ens, year, year_index, collect=None):
        """Propagate one calendar year, then update if data is usable."""
        ens = refresh_window(ens)
        z = obs_for(year)
        nodes = measured_nodes_for(z)
        base_step = year_index * config.steps_per_year
        for k in range(config.steps_per_year):
            ens = forecast_step(ens, params, population, config,
                                step_index=base_step + k, measured_nodes=nodes)
        if collect is not None:
            collect(ens, z)
        if z is not None:
            ens = update_step(ens, z, config, h_matrix=h_matrix,
                              draw_index=year_index)
            if anchor:
                observed = float(np.nansum(np.where(z.mask, z.values, 0.0))) \
                    * config.count_scale
                ens = anchor_mu_d(ens, observed, config,
                                  int((z.mask & np.isfinite(z.values)).sum()),
                                  draw_index=year_index)
            ens = annual_measurement_reset(ens)
        return ens

    # warm-up: assimilate the first usable year repeatedly, keep parameters
    ens = init_ensemble(config, x0, draw_index=0)
    warm_year = None
    if data is not None:
        for y in data.years:
            if obs_for(int(y)) is not None:
                warm_year = int(y)
                break
    if warm_year is not None:
        for cycle in range(config.warmup_cycles):
            fresh = init_ensemble(config, x0, draw_index=cycle + 1)
            fresh.members[:, 2 * na:] = ens.members[:, 2 * na:]
            # negative warm-up indices keep their noise apart from the main run
            ens = run_year(fresh, warm_year, -(cycle + 1))
        main = init_ensemble(config, x0, draw_index=config.warmup_cycles + 1)
        main.members[:, 2 * na:] = ens.members[:, 2 * na:]
        ens = main
        ens = replace(ens, time=0.0, window_start=0.0)

    parameters, fit_bins, display_bins = [], [], []
    prev_cum_display = None
    prev_cum_fit = None

    for year_index, year in enumerate(range(first_year, horizon_year + 1)):
        forecast_only = last_observed is None or year > last_observed
        records = {}

        def collect(e, z, year=year, forecast_only=forecast_only):
            d_blk = split_state(e.members, na)[1]
            if display_matrix is not None:
                records["display"] = d_blk @ display_matrix.T
            if h_matrix is not None:
                records["fit"] = (d_blk @ h_matrix.T, z)

        ens = run_year(ens, year, year_index, collect=collect)

        if "display" in records:
            cum = records["display"] * config.count_scale
            inc = cum if (prev_cum_display is None or not forecast_only) \
                else cum - prev_cum_display
            sigma = cum.std(axis=0, ddof=1)
            for l, (lo, hi) in enumerate(display_scheme.bins):
                display_bins.append(BinPrediction(
                    year=year, age_lo=lo, age_hi=hi,
                    predicted=float(inc[:, l].mean()), sigma=float(sigma[l]),
                    observed=None, forecast_only=forecast_only))
            prev_cum_display = cum if forecast_only else None
        if "fit" in records:
            cum, z = records["fit"]
            cum = cum * config.count_scale
            inc = cum if (prev_cum_fit is None or not forecast_only) \
                else cum - prev_cum_fit
            sigma = cum.std(axis=0, ddof=1)
            for l, (lo, hi) in enumerate(scheme.bins):
                observed = None
                if z is not None and z.mask[l] and np.isfinite(z.values[l]):
                    observed = float(z.values[l] * config.count_scale)
                fit_bins.append(BinPrediction(
                    year=year, age_lo=lo, age_hi=hi,
                    predicted=float(inc[:, l].mean()), sigma=float(sigma[l]),
                    observed=observed, forecast_only=forecast_only))
            prev_cum_fit = cum if forecast_only else None

        parameters.append(YearParams(year, *_param_stats(ens.members, na)))

    return AssimilationResult(parameters=parameters, fit_bins=fit_bins,
                              display_bins=display_bins,
                              last_observed_year=last_observed,
                              first_year=first_year, horizon=horizon_year)


# ---------------------------------------------------------------------------
# deterministic runs and synthetic truth

def propagate_deterministic(params_by_year, config: FilterConfig, population,
                            first_year: int):
    """Single-trajectory forward run with per-year parameter bundles.

    Yields (year, densities at year end, drug-caused deaths per node
    over the year in count units).
    """
    na = config.grid.n_a
    template = params_by_year[0]
    values = initial_density(config.grid.ages, template.initial)[None, :]
    out = []
    for year_index, pars in enumerate(params_by_year):
        year = first_year + year_index
        profiles = values.copy()
        deaths = np.zeros(na)
        logs = np.log([pars.mortality.mu_d, pars.influx.r1, pars.influx.r2,
                       pars.influx.alpha1, pars.influx.beta1,
                       pars.influx.alpha2, pars.influx.beta2])[None, :]
        for k in range(config.steps_per_year):
            tau = k * config.dt
            rates = _density_rates(values, profiles, logs, tau,
                                   float(year_index), pars, population,
                                   config.grid)
            deaths += config.dt * pars.mortality.mu_d * values[0] * \
                config.grid.delta_a
            values = np.maximum(values + config.dt * rates, 0.0)
        out.append((year, values[0].copy(), deaths.copy()))
    return out


def synthetic_observations(params_by_year, config: FilterConfig, population,
                           scheme: AgeBinScheme, first_year: int) -> ObservationSeries:
    """Noise-free per-bin annual counts generated by the model itself."""
    from .ingest import Reliability
    h_matrix = measure_matrix(config.grid, scheme)
    years, rows = [], []
    for year, _, deaths in propagate_deterministic(params_by_year, config,
                                                   population, first_year):
        years.append(year)
        rows.append(h_matrix @ deaths)
    counts = np.asarray(rows)
    rel = np.full(counts.shape, Reliability.OK, dtype=object)
    return ObservationSeries(scheme=scheme, years=np.asarray(years, dtype=int),
                             counts=counts, reliability=rel)
