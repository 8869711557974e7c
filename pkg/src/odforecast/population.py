"""Smooth population surface N(a, t) from gridded age-by-year tables.

The surface is a degree-2 tensor-product interpolating spline through
the table values, exposing the value and both partial derivatives the
model's rate expressions need. Beyond the last data year the surface
extends linearly in time from the last two annual profiles; ages above
the last data age hold the boundary profile. Values are clamped at zero
from below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline


@dataclass
class PopulationTable:
    """Rectangular persons-per-single-age table over calendar years."""

    ages: np.ndarray          # single years of age, ascending
    years: np.ndarray         # calendar years, ascending
    counts: np.ndarray        # shape (n_ages, n_years)

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=float)
        self.years = np.asarray(self.years, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (self.ages.size, self.years.size):
            raise ValueError("counts must have shape (n_ages, n_years)")
        if np.any(np.diff(self.ages) <= 0) or np.any(np.diff(self.years) <= 0):
            raise ValueError("ages and years must be strictly increasing")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("counts must be finite and nonnegative")

    @classmethod
    def from_records(cls, records) -> "PopulationTable":
        """Build from (year, age, count) triples; the grid must be complete."""
        recs = list(records)
        if not recs:
            raise ValueError("no population records")
        years = np.array(sorted({r[0] for r in recs}), dtype=float)
        ages = np.array(sorted({r[1] for r in recs}), dtype=float)
        counts = np.full((ages.size, years.size), np.nan)
        ai = {a: i for i, a in enumerate(ages)}
        yi = {y: j for j, y in enumerate(years)}
        for year, age, count in recs:
            i, j = ai[float(age)], yi[float(year)]
            if not np.isnan(counts[i, j]):
                raise ValueError(f"duplicate cell (year={year}, age={age})")
            counts[i, j] = count
        missing = np.argwhere(np.isnan(counts))
        if missing.size:
            gaps = [(int(years[j]), int(ages[i])) for i, j in missing[:20]]
            raise ValueError(f"table is not rectangular; missing (year, age) cells: {gaps}"
                             + (" ..." if len(missing) > 20 else ""))
        return cls(ages=ages, years=years, counts=counts)

    def total(self, year) -> float:
        """Sum of counts over all ages for one calendar year."""
        j = int(np.flatnonzero(self.years == float(year))[0])
        return float(self.counts[:, j].sum())


class PopulationSurface:
    """Interpolating degree-2 spline surface with linear time extension.

    Queries accept broadcastable age/year arrays. Supported ranges: ages
    a >= 0 (ages above the last knot hold the boundary profile) and
    years in [first_year, last_year + extrapolation_years].
    """

    def __init__(self, table: PopulationTable, extrapolation_years: float = 5.0):
        if table.ages.size < 3 or table.years.size < 3:
            raise ValueError("need at least three knots per dimension for a degree-2 surface")
        self.table = table
        self.age_lo = float(table.ages[0])
        self.age_hi = float(table.ages[-1])
        self.year_lo = float(table.years[0])
        self.year_hi = float(table.years[-1])
        self.extrapolation_years = float(extrapolation_years)
        self._spline = RectBivariateSpline(table.ages, table.years, table.counts,
                                           kx=2, ky=2, s=0)

    def _check(self, a, t):
        scalar = np.ndim(a) == 0 and np.ndim(t) == 0
        a, t = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(t, dtype=float))
        a, t = np.atleast_1d(a), np.atleast_1d(t)
        if np.any(a < self.age_lo):
            raise ValueError(f"age below the supported range (min {self.age_lo})")
        if np.any(t < self.year_lo) or np.any(t > self.year_hi + self.extrapolation_years):
            raise ValueError("year outside the supported range "
                             f"[{self.year_lo}, {self.year_hi + self.extrapolation_years}]")
        return a, t, scalar

    def _raw(self, a, t, dx=0, dy=0):
        """Spline evaluation with the age clamp and linear time extension."""
        ac = np.minimum(a, self.age_hi)
        inside = t <= self.year_hi
        out = np.empty(a.shape)
        if np.any(inside):
            out[inside] = self._spline.ev(ac[inside], t[inside], dx=dx, dy=dy)
        if np.any(~inside):
            ae = ac[~inside]
            te = t[~inside]
            last = self._spline.ev(ae, np.full_like(ae, self.year_hi), dx=dx)
            prev = self._spline.ev(ae, np.full_like(ae, self.year_hi - 1.0), dx=dx)
            if dy == 0:
                out[~inside] = last + (te - self.year_hi) * (last - prev)
            else:
                out[~inside] = last - prev
        if dx == 1:
            out = np.where(a > self.age_hi, 0.0, out)
        return out

    def eval(self, a, t):
        """Population density N(a, t), persons per year of age, clamped at zero."""
        a, t, scalar = self._check(a, t)
        out = np.maximum(self._raw(a, t), 0.0)
        return float(out[0]) if scalar else out

    def eval_da(self, a, t):
        """Partial derivative of the fitted surface in age."""
        a, t, scalar = self._check(a, t)
        out = self._raw(a, t, dx=1)
        return float(out[0]) if scalar else out

    def eval_dt(self, a, t):
        """Partial derivative of the fitted surface in calendar time."""
        a, t, scalar = self._check(a, t)
        out = self._raw(a, t, dy=1)
        return float(out[0]) if scalar else out


def fit_surface(table: PopulationTable, extrapolation_years: float = 5.0) -> PopulationSurface:
    """Fit the interpolating surface to a rectangular population table."""
    return PopulationSurface(table, extrapolation_years=extrapolation_years)


def constant_table(value: float, years, ages) -> PopulationTable:
    """Table holding one constant count; handy for synthetic scenarios."""
    years = np.asarray(years, dtype=float)
    ages = np.asarray(ages, dtype=float)
    return PopulationTable(ages=ages, years=years,
                           counts=np.full((ages.size, years.size), float(value)))
