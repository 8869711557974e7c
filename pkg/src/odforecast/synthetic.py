"""Synthetic data generators for demos, twin experiments, and tests."""

from __future__ import annotations

import numpy as np

from .model import InfluxParams, ModelParams, MortalityParams, InitialCondition
from .population import PopulationTable


def synthetic_population_table(first_year: int = 1999, last_year: int = 2021,
                               total_start: float = 274_886_150.0,
                               growth_per_year: float = 2.3e6,
                               max_age: int = 85) -> PopulationTable:
    """Smooth two-peaked age profile with near-linear total growth."""
    ages = np.arange(0, max_age + 1, dtype=float)
    years = np.arange(first_year, last_year + 1, dtype=float)
    shape = (np.exp(-((ages - 25.0) / 22.0) ** 2)
             + 0.85 * np.exp(-((ages - 52.0) / 20.0) ** 2) + 0.12)
    shape /= shape.sum()
    totals = total_start + growth_per_year * (years - first_year)
    return PopulationTable(ages=ages, years=years,
                           counts=shape[:, None] * totals[None, :])


def twin_truth_params(base: ModelParams, n_years: int,
                      mu_d_start: float = 0.002, mu_d_end: float = 0.015,
                      a1max_start: float = 30.0, a1max_end: float = 20.0,
                      r1_end: float = 0.06):
    """Per-year parameter bundles for a twin-experiment truth trajectory.

    The drug-caused rate steps geometrically between its endpoints, the
    younger influx peak drifts linearly, and the younger influx
    amplitude grows geometrically toward ``r1_end`` (a growing inflow of
    young new cases is what makes the influx shape observable in the
    fatality profile). Everything else stays at the base values.
    """
    if n_years < 2:
        raise ValueError("need at least two years")
    mu_ratio = (mu_d_end / mu_d_start) ** (1.0 / (n_years - 1))
    r1_ratio = (r1_end / base.influx.r1) ** (1.0 / (n_years - 1))
    out = []
    for k in range(n_years):
        mu_d = mu_d_start * mu_ratio ** k
        a1max = a1max_start + (a1max_end - a1max_start) * k / (n_years - 1)
        alpha1 = 1.0 + a1max * base.influx.beta1
        mortality = MortalityParams(
            gamma1=base.mortality.gamma1, gamma2=base.mortality.gamma2,
            lambda1=base.mortality.lambda1, lambda2=base.mortality.lambda2,
            m_shift=base.mortality.m_shift, mu_d=mu_d)
        influx = InfluxParams(r1=base.influx.r1 * r1_ratio ** k, r2=base.influx.r2,
                              alpha1=alpha1, beta1=base.influx.beta1,
                              alpha2=base.influx.alpha2, beta2=base.influx.beta2)
        out.append(ModelParams(mortality=mortality, influx=influx,
                               initial=base.initial, start_year=base.start_year,
                               dt=base.dt))
    return out
