"""Parsers for the canonical tab-separated data files.

Canonical files are UTF-8, tab-separated, LF line endings, with a
header row. Comment lines start with '#'; blank lines, lines starting
with '---', and a trailing 'Notes' block are skipped. Numbers are plain
ASCII digits without thousands separators.

    population.tsv  year <TAB> age <TAB> population
    fatalities.tsv  year <TAB> age_lo <TAB> age_hi <TAB> deaths <TAB> flag
    counties.tsv    county_id <TAB> county_name <TAB> year <TAB> deaths
                    <TAB> population <TAB> crude_rate <TAB> flag

Flags are one of {ok, unreliable, suppressed}. Suppressed rows carry an
empty deaths cell; no numeric value is ever synthesized for them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .population import PopulationTable


class ParseError(ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class Reliability(enum.Enum):
    OK = "ok"
    UNRELIABLE = "unreliable"
    SUPPRESSED = "suppressed"


@dataclass(frozen=True)
class AgeBinScheme:
    """Ordered observation age-bin edges; bin l covers [edges[l], edges[l+1])."""

    edges: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def bins(self):
        return [(self.edges[i], self.edges[i + 1]) for i in range(self.n_bins)]

    def index_of(self, lo: float, hi: float) -> int:
        for i, (blo, bhi) in enumerate(self.bins):
            if blo == lo and bhi == hi:
                return i
        raise KeyError(f"age group [{lo}, {hi}) is not a bin of this scheme")


def national_scheme() -> AgeBinScheme:
    """The 22-group nationwide reporting scheme over [0, 120) years."""
    edges = [0.0, 1.0, 5.0] + [10.0 + 5.0 * k for k in range(19)] + [120.0]
    return AgeBinScheme(edges=tuple(edges))


def county_scheme() -> AgeBinScheme:
    """The 11-group 10-year scheme used for county-level series."""
    edges = [10.0 * k for k in range(11)] + [120.0]
    return AgeBinScheme(edges=tuple(edges))


@dataclass(frozen=True)
class FatalityRecord:
    year: int
    age_lo: float
    age_hi: float
    deaths: float | None
    reliability: Reliability


@dataclass
class ObservationSeries:
    """Per-year fatality counts aligned to one age-bin scheme.

    ``counts`` is (n_years, n_bins) with NaN where no usable number
    exists; ``reliability`` carries the per-cell flag. Years absent from
    the file appear in ``year_gaps`` and as all-suppressed rows.
    """

    scheme: AgeBinScheme
    years: np.ndarray
    counts: np.ndarray
    reliability: np.ndarray
    year_gaps: list = field(default_factory=list)

    def mask_for(self, year: int, strict: bool = False) -> np.ndarray:
        """Boolean usable-bin mask for one year (True = usable)."""
        i = int(np.flatnonzero(self.years == year)[0])
        ok = ~np.isnan(self.counts[i])
        ok &= self.reliability[i] != Reliability.SUPPRESSED
        if strict:
            ok &= self.reliability[i] != Reliability.UNRELIABLE
        return ok

    def row(self, year: int) -> np.ndarray:
        i = int(np.flatnonzero(self.years == year)[0])
        return self.counts[i]

    def total(self, year: int) -> float:
        r = self.row(year)
        return float(np.nansum(r))


@dataclass(frozen=True)
class CountyRecord:
    county_id: str
    county_name: str
    year: int
    deaths: float | None
    population: float | None
    crude_rate: float | None
    reliability: Reliability
    rate_consistent: bool = True


@dataclass
class CountyTable:
    records: list

    def years(self):
        return sorted({r.year for r in self.records})

    def for_year(self, year: int):
        return [r for r in self.records if r.year == year]

    def warnings(self):
        return [r for r in self.records if not r.rate_consistent]


def _data_lines(path):
    """Yield (lineno, line) for data rows, skipping comments and trailers."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            stripped = line.strip()
            if not stripped or stripped.startswith("#") or stripped.startswith("---"):
                continue
            if stripped == "Notes" or stripped.startswith('"Notes'):
                break
            yield lineno, line


def _split(path, lineno, line, n_cols):
    parts = line.split("\t")
    if len(parts) != n_cols:
        raise ParseError(path, lineno, f"expected {n_cols} tab-separated columns, got {len(parts)}")
    return parts


def _parse_int(path, lineno, text, what):
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(path, lineno, f"bad {what}: {text!r}") from None


def _parse_float(path, lineno, text, what):
    try:
        return float(text.strip())
    except ValueError:
        raise ParseError(path, lineno, f"bad {what}: {text!r}") from None


def _parse_flag(path, lineno, text):
    try:
        return Reliability(text.strip().lower())
    except ValueError:
        raise ParseError(path, lineno, f"bad reliability flag: {text!r}") from None


def parse_population(path) -> PopulationTable:
    """Parse canonical population.tsv into a rectangular table."""
    path = Path(path)
    records = []
    seen = set()
    header_done = False
    for lineno, line in _data_lines(path):
        parts = _split(path, lineno, line, 3)
        if not header_done:
            if [p.strip().lower() for p in parts] != ["year", "age", "population"]:
                raise ParseError(path, lineno, "expected header 'year\\tage\\tpopulation'")
            header_done = True
            continue
        year = _parse_int(path, lineno, parts[0], "year")
        age = _parse_int(path, lineno, parts[1], "age")
        count = _parse_float(path, lineno, parts[2], "population")
        if (year, age) in seen:
            raise ParseError(path, lineno, f"duplicate cell (year={year}, age={age})")
        seen.add((year, age))
        if count < 0:
            raise ParseError(path, lineno, "population must be nonnegative")
        records.append((year, age, count))
    if not header_done:
        raise ParseError(path, 0, "missing header row")
    return PopulationTable.from_records(records)


def parse_fatalities(path, scheme: AgeBinScheme) -> ObservationSeries:
    """Parse canonical fatalities.tsv aligned to ``scheme``."""
    path = Path(path)
    cells = {}
    header_done = False
    for lineno, line in _data_lines(path):
        parts = _split(path, lineno, line, 5)
        if not header_done:
            if [p.strip().lower() for p in parts] != ["year", "age_lo", "age_hi", "deaths", "flag"]:
                raise ParseError(path, lineno, "expected header 'year\\tage_lo\\tage_hi\\tdeaths\\tflag'")
            header_done = True
            continue
        year = _parse_int(path, lineno, parts[0], "year")
        lo = _parse_float(path, lineno, parts[1], "age_lo")
        hi = _parse_float(path, lineno, parts[2], "age_hi")
        flag = _parse_flag(path, lineno, parts[4])
        try:
            b = scheme.index_of(lo, hi)
        except KeyError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        deaths_text = parts[3].strip()
        if flag is Reliability.SUPPRESSED:
            if deaths_text and deaths_text.lower() != "suppressed":
                raise ParseError(path, lineno, "suppressed rows must not carry a count")
            deaths = None
        else:
            if deaths_text == "":
                raise ParseError(path, lineno, "missing death count on a non-suppressed row")
            deaths = _parse_float(path, lineno, deaths_text, "deaths")
            if deaths < 0:
                raise ParseError(path, lineno, "deaths must be nonnegative")
        if (year, b) in cells:
            raise ParseError(path, lineno, f"duplicate cell (year={year}, bin={b})")
        cells[(year, b)] = (deaths, flag)
    if not header_done:
        raise ParseError(path, 0, "missing header row")
    if not cells:
        raise ParseError(path, 0, "no data rows")

    file_years = sorted({y for y, _ in cells})
    years = np.arange(file_years[0], file_years[-1] + 1)
    gaps = [int(y) for y in years if y not in file_years]
    counts = np.full((years.size, scheme.n_bins), np.nan)
    rel = np.full((years.size, scheme.n_bins), Reliability.SUPPRESSED, dtype=object)
    for (year, b), (deaths, flag) in cells.items():
        i = int(year - years[0])
        rel[i, b] = flag
        if deaths is not None:
            counts[i, b] = deaths
    return ObservationSeries(scheme=scheme, years=years, counts=counts,
                             reliability=rel, year_gaps=gaps)


def parse_county(path) -> CountyTable:
    """Parse canonical counties.tsv; inconsistent crude rates become warnings."""
    path = Path(path)
    records = []
    header_done = False
    header = ["county_id", "county_name", "year", "deaths", "population", "crude_rate", "flag"]
    for lineno, line in _data_lines(path):
        parts = _split(path, lineno, line, 7)
        if not header_done:
            if [p.strip().lower() for p in parts] != header:
                raise ParseError(path, lineno, "expected header " + "\\t".join(header))
            header_done = True
            continue
        county_id = parts[0].strip()
        name = parts[1].strip()
        year = _parse_int(path, lineno, parts[2], "year")
        flag = _parse_flag(path, lineno, parts[6])
        if flag is Reliability.SUPPRESSED:
            deaths = population = rate = None
            consistent = True
        else:
            deaths = _parse_float(path, lineno, parts[3], "deaths")
            population = _parse_float(path, lineno, parts[4], "population")
            rate = _parse_float(path, lineno, parts[5], "crude_rate")
            if population <= 0:
                raise ParseError(path, lineno, "population must be positive")
            # published rates are rounded to one decimal
            consistent = abs(rate - 1e5 * deaths / population) <= 0.6
        records.append(CountyRecord(county_id=county_id, county_name=name, year=year,
                                    deaths=deaths, population=population, crude_rate=rate,
                                    reliability=flag, rate_consistent=consistent))
    if not header_done:
        raise ParseError(path, 0, "missing header row")
    return CountyTable(records=records)


def county_population_profile(bands, ages=None) -> PopulationTable:
    """Spread banded population counts uniformly over single years of age.

    ``bands`` holds (year, age_lo, age_hi, population) rows covering a
    contiguous age range with integer band edges. Each band's count is
    split evenly across its single-year ages, preserving totals, so the
    result feeds the same surface fit as single-age tables.
    """
    rows = list(bands)
    if not rows:
        raise ValueError("no population bands")
    records = []
    by_year = {}
    for year, lo, hi, count in rows:
        by_year.setdefault(int(year), []).append((float(lo), float(hi), float(count)))
    for year, blist in sorted(by_year.items()):
        blist.sort()
        for (lo, hi, count), nxt in zip(blist, blist[1:] + [None]):
            if hi <= lo or lo != int(lo) or hi != int(hi):
                raise ValueError(f"bad band [{lo}, {hi}) in year {year}")
            if nxt is not None and nxt[0] != hi:
                raise ValueError(f"missing band between {hi} and {nxt[0]} in year {year}")
            width = int(hi - lo)
            per_age = count / width
            for age in range(int(lo), int(hi)):
                records.append((year, age, per_age))
    table = PopulationTable.from_records(records)
    if ages is not None:
        keep = np.isin(table.ages, np.asarray(ages, dtype=float))
        table = PopulationTable(ages=table.ages[keep], years=table.years,
                                counts=table.counts[keep])
    return table


# ---------------------------------------------------------------------------
# canonical writers (round-trip counterparts of the parsers)

def _fmt_count(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_population(table: PopulationTable, path, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("year\tage\tpopulation\n")
        for j, year in enumerate(table.years):
            for i, age in enumerate(table.ages):
                fh.write(f"{int(year)}\t{int(age)}\t{_fmt_count(table.counts[i, j])}\n")


def write_fatalities(series: ObservationSeries, path, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("year\tage_lo\tage_hi\tdeaths\tflag\n")
        for i, year in enumerate(series.years):
            for b, (lo, hi) in enumerate(series.scheme.bins):
                flag = series.reliability[i, b]
                cell = "" if np.isnan(series.counts[i, b]) else _fmt_count(series.counts[i, b])
                fh.write(f"{int(year)}\t{_fmt_count(lo)}\t{_fmt_count(hi)}\t{cell}\t{flag.value}\n")


def write_county(table: CountyTable, path, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("county_id\tcounty_name\tyear\tdeaths\tpopulation\tcrude_rate\tflag\n")
        for r in table.records:
            if r.reliability is Reliability.SUPPRESSED:
                cells = ["", "", ""]
            else:
                cells = [_fmt_count(r.deaths), _fmt_count(r.population), f"{r.crude_rate:.1f}"]
            fh.write(f"{r.county_id}\t{r.county_name}\t{r.year}\t"
                     f"{cells[0]}\t{cells[1]}\t{cells[2]}\t{r.reliability.value}\n")
