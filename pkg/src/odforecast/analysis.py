"""County-level analytics: crude rates, concentration, rankings, histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import CountyTable, Reliability


@dataclass
class CountyYearSlice:
    """Counties of one year that pass the significance and reliability filters."""

    year: int
    county_ids: list
    county_names: list
    deaths: np.ndarray
    population: np.ndarray
    crude_rates: np.ndarray

    @property
    def n_counties(self) -> int:
        return len(self.county_ids)


def crude_rate(deaths: float, population: float) -> float:
    """Deaths per 100,000 persons."""
    if population <= 0:
        raise ValueError("population must be positive")
    return 1e5 * deaths / population


def county_slice(table: CountyTable, year: int, min_deaths: float = 10.0,
                 strict: bool = True) -> CountyYearSlice:
    """Filter one year's county records into an analysis slice.

    ``strict`` drops rows with any unreliable entry; suppressed rows are
    always dropped. ``min_deaths`` is the significance threshold on the
    reported count (rows below it are dropped).
    """
    ids, names, deaths, pops, rates = [], [], [], [], []
    for r in table.for_year(year):
        if r.reliability is Reliability.SUPPRESSED:
            continue
        if strict and r.reliability is Reliability.UNRELIABLE:
            continue
        if r.deaths is None or r.population is None or r.deaths < min_deaths:
            continue
        ids.append(r.county_id)
        names.append(r.county_name)
        deaths.append(r.deaths)
        pops.append(r.population)
        rates.append(r.crude_rate if r.crude_rate is not None
                     else crude_rate(r.deaths, r.population))
    return CountyYearSlice(year=year, county_ids=ids, county_names=names,
                           deaths=np.asarray(deaths, dtype=float),
                           population=np.asarray(pops, dtype=float),
                           crude_rates=np.asarray(rates, dtype=float))


def gini_index(s: CountyYearSlice) -> float:
    """Gini index of overdose-death concentration across counties.

    Counties are ordered by crude rate ascending; the Lorenz curve plots
    the cumulative death fraction against the cumulative population
    fraction, and the index is one minus twice the trapezoid area under
    that curve. Ranges over [0, 1 - 1/n] for n counties.
    """
    if s.n_counties < 2:
        raise ValueError("need at least two counties")
    if np.any(s.population <= 0):
        raise ValueError("populations must be positive")
    order = np.argsort(s.crude_rates, kind="stable")
    pop = s.population[order]
    dth = s.deaths[order]
    x = np.concatenate([[0.0], np.cumsum(pop) / pop.sum()])
    y = np.concatenate([[0.0], np.cumsum(dth) / dth.sum()])
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]))) / 2.0
    return 1.0 - 2.0 * area


def top_counties(s: CountyYearSlice, k: int, by: str = "deaths"):
    """Top-k counties by 'deaths' or 'crude_rate'; ties break on county_id."""
    if by not in ("deaths", "crude_rate"):
        raise ValueError("by must be 'deaths' or 'crude_rate'")
    if k > s.n_counties:
        raise ValueError("k exceeds the number of counties")
    key = s.deaths if by == "deaths" else s.crude_rates
    order = sorted(range(s.n_counties), key=lambda i: (-key[i], s.county_ids[i]))
    return [(s.county_ids[i], s.county_names[i], float(s.deaths[i]),
             float(s.population[i]), float(s.crude_rates[i])) for i in order[:k]]


def histogram(values, edges) -> np.ndarray:
    """Counts per [lo, hi) bin; values outside [first, last) are dropped."""
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing")
    if values.size == 0:
        return np.zeros(edges.size - 1, dtype=int)
    idx = np.searchsorted(edges, values, side="right") - 1
    ok = (idx >= 0) & (values < edges[-1])
    return np.bincount(idx[ok], minlength=edges.size - 1).astype(int)
