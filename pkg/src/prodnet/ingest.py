"""Parsing of daily production tables and engineering-aware imputation.

Input tables follow the Volve daily-production layout by default (one row
per well and day); ``column_map`` rebinds logical variables to other
headers so different exports ingest without code changes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DuplicateKeyError, EmptyTableError, RowError, SchemaError, TopologyError
from .topology import Topology

VOLUME_VARS = ("oil_vol", "gas_vol", "water_vol")
SENSOR_VARS = ("downhole_pressure", "wellhead_pressure", "wellhead_temp", "choke_size")
VARIABLES = VOLUME_VARS + ("on_stream_hrs",) + SENSOR_VARS

REQUIRED = ("date", "well_id", "oil_vol", "on_stream_hrs")

DEFAULT_COLUMN_MAP: dict[str, str] = {
    "date": "DATEPRD",
    "well_id": "NPD_WELL_BORE_NAME",
    "oil_vol": "BORE_OIL_VOL",
    "gas_vol": "BORE_GAS_VOL",
    "water_vol": "BORE_WAT_VOL",
    "on_stream_hrs": "ON_STREAM_HRS",
    "downhole_pressure": "AVG_DOWNHOLE_PRESSURE",
    "wellhead_pressure": "AVG_WHP_P",
    "wellhead_temp": "AVG_WHT_P",
    "choke_size": "AVG_CHOKE_SIZE_P",
}

DATE_FORMATS = ("%Y-%m-%d", "%d-%b-%y", "%d-%b-%Y", "%d/%m/%Y", "%d.%m.%Y", "%Y/%m/%d")
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "-"}


@dataclass(frozen=True)
class ProductionRecord:
    """One well-day. ``None`` marks a value that was not observed."""

    date: date
    well_id: str
    oil_vol: float | None = None
    gas_vol: float | None = None
    water_vol: float | None = None
    on_stream_hrs: float | None = None
    downhole_pressure: float | None = None
    wellhead_pressure: float | None = None
    wellhead_temp: float | None = None
    choke_size: float | None = None

    @property
    def presence(self) -> dict[str, bool]:
        return {v: getattr(self, v) is not None for v in VARIABLES}


@dataclass(frozen=True)
class ImputePolicy:
    ffill_horizon: int = 3
    persistent_missing_frac: float = 0.20


@dataclass
class WellSeries:
    """Chronological series for one well.

    ``values`` holds one float array per variable with NaN for missing
    entries; ``indicators`` holds 0/1 arrays for variables whose missingness
    is exposed to the model.
    """

    well_id: str
    facility_id: str
    field_id: str
    dates: list[date]
    values: dict[str, np.ndarray]
    indicators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise DuplicateKeyError(f"dates for well {self.well_id!r} not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def records(self) -> list[ProductionRecord]:
        out = []
        for i, d in enumerate(self.dates):
            kw = {}
            for v in VARIABLES:
                x = self.values[v][i]
                kw[v] = None if math.isnan(x) else float(x)
            out.append(ProductionRecord(date=d, well_id=self.well_id, **kw))
        return out

    def equals(self, other: "WellSeries") -> bool:
        if (self.well_id, self.facility_id, self.field_id, self.dates) != (
            other.well_id, other.facility_id, other.field_id, other.dates
        ):
            return False
        if set(self.indicators) != set(other.indicators):
            return False
        return all(np.array_equal(self.values[v], other.values[v], equal_nan=True) for v in VARIABLES) and all(
            np.array_equal(self.indicators[v], other.indicators[v]) for v in self.indicators
        )


def parse_date(text: str, row: int) -> date:
    text = text.strip()
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise RowError(row, f"unparseable date {text!r}")


def _parse_number(text: str, row: int, column: str, decimal_comma: bool) -> float | None:
    text = text.strip()
    if text.lower() in _MISSING_TOKENS:
        return None
    if decimal_comma and "," in text and "." not in text:
        text = text.replace(",", ".")
    try:
        value = float(text)
    except ValueError:
        raise RowError(row, f"unparseable number {text!r} in column {column!r}") from None
    if not math.isfinite(value):
        return None
    return value


def detect_delimiter(header_line: str) -> str:
    return ";" if header_line.count(";") > header_line.count(",") else ","


def parse_production_table(raw: str, column_map: Mapping[str, str] | None = None) -> list[ProductionRecord]:
    """Parse delimited text into records, one per row, in input order.

    Raises SchemaError when a required variable's column is absent,
    RowError for unparseable or out-of-range cells and EmptyTableError when
    the table has no data rows.
    """
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cmap.update(column_map)
    text = raw.lstrip("﻿")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise EmptyTableError("production table is empty")
    delimiter = detect_delimiter(lines[0])
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    position = {name: i for i, name in enumerate(header)}

    for var in REQUIRED:
        col = cmap.get(var)
        if col is None or col not in position:
            raise SchemaError(f"required column for {var!r} missing: {col!r}")
    bound = {var: position[cmap[var]] for var in VARIABLES if cmap.get(var) in position}

    records: list[ProductionRecord] = []
    for row, cells in enumerate(reader):
        if not cells or not any(c.strip() for c in cells):
            continue
        if len(cells) < len(header):
            cells = cells + [""] * (len(header) - len(cells))
        well = cells[position[cmap["well_id"]]].strip()
        if not well:
            raise RowError(row, "empty well identifier")
        kw = {}
        for var, idx in bound.items():
            kw[var] = _parse_number(cells[idx], row, header[idx], delimiter == ";")
        hrs = kw.get("on_stream_hrs")
        if hrs is not None and not 0.0 <= hrs <= 24.0:
            raise RowError(row, f"on_stream_hrs {hrs} outside [0, 24]")
        for var in VOLUME_VARS:
            if kw.get(var) is not None and kw[var] < 0:
                raise RowError(row, f"negative {var} {kw[var]}")
        records.append(ProductionRecord(date=parse_date(cells[position[cmap["date"]]], row), well_id=well, **kw))
    if not records:
        raise EmptyTableError("production table has a header but no rows")
    return records


def read_production_table(path: str | Path, column_map: Mapping[str, str] | None = None) -> list[ProductionRecord]:
    return parse_production_table(Path(path).read_text(encoding="utf-8"), column_map)


def build_well_series(records: Iterable[ProductionRecord], topology: Topology) -> dict[str, WellSeries]:
    by_well: dict[str, dict[date, ProductionRecord]] = {}
    for rec in records:
        if rec.well_id not in topology.wells:
            raise TopologyError(f"well {rec.well_id!r} is not in the topology")
        days = by_well.setdefault(rec.well_id, {})
        if rec.date in days:
            raise DuplicateKeyError(f"duplicate record for (well={rec.well_id!r}, date={rec.date.isoformat()})")
        days[rec.date] = rec

    out: dict[str, WellSeries] = {}
    for well in sorted(by_well):
        dates = sorted(by_well[well])
        recs = [by_well[well][d] for d in dates]
        values = {
            v: np.array([np.nan if getattr(r, v) is None else getattr(r, v) for r in recs], dtype=np.float64)
            for v in VARIABLES
        }
        facility, fld = topology.wells[well]
        out[well] = WellSeries(well, facility, fld, dates, values)
    return out


def _missing_runs(mask: np.ndarray):
    """Yield (start, stop) of consecutive True runs."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[0::2], edges[1::2])


def impute_series(series: WellSeries, policy: ImputePolicy = ImputePolicy()) -> WellSeries:
    """Fill gaps without fabricating long stretches of signal.

    Volumes missing on a zero-hour day become 0. Other gaps take the last
    observed value for at most ``ffill_horizon`` steps. Variables missing
    more than ``persistent_missing_frac`` of the time get an indicator column
    (1 where originally missing); anything still unfilled becomes 0 with the
    indicator set.
    """
    values = {v: series.values[v].copy() for v in VARIABLES}
    indicators = {v: a.copy() for v, a in series.indicators.items()}
    hrs = values["on_stream_hrs"]
    down = ~np.isnan(hrs) & (hrs == 0.0)

    for v in VOLUME_VARS:
        values[v][np.isnan(values[v]) & down] = 0.0

    n = len(series)
    for v in VARIABLES:
        x = values[v]
        missing = np.isnan(x)
        if not missing.any():
            continue
        for start, stop in _missing_runs(missing):
            if start == 0:
                continue
            fill_to = min(stop, start + policy.ffill_horizon)
            x[start:fill_to] = x[start - 1]
        residual = np.isnan(x)
        flags = indicators.get(v)
        if n and missing.mean() > policy.persistent_missing_frac:
            flags = missing.astype(np.int8) if flags is None else (flags | missing).astype(np.int8)
        if residual.any():
            flags = residual.astype(np.int8) if flags is None else (flags | residual).astype(np.int8)
            x[residual] = 0.0
        if flags is not None:
            indicators[v] = flags
    return replace(series, values=values, indicators=indicators)


def series_to_csv(series: WellSeries) -> str:
    """Cleaned series as CSV: date, topology ids, variables, then ``miss_<var>`` flags."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    flags = sorted(series.indicators)
    writer.writerow(["date", "well_id", "facility_id", "field_id", *VARIABLES, *(f"miss_{v}" for v in flags)])
    for i, d in enumerate(series.dates):
        row = [d.isoformat(), series.well_id, series.facility_id, series.field_id]
        row += ["" if math.isnan(series.values[v][i]) else repr(float(series.values[v][i])) for v in VARIABLES]
        row += [str(int(series.indicators[v][i])) for v in flags]
        writer.writerow(row)
    return buf.getvalue()


def series_from_csv(text: str) -> WellSeries:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise EmptyTableError("cleaned series file has no rows")
    header, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(header)}
    missing_cols = [c for c in ("date", "well_id", "facility_id", "field_id", *VARIABLES) if c not in col]
    if missing_cols:
        raise SchemaError(f"cleaned series file lacks columns {missing_cols}")
    values = {
        v: np.array([float(r[col[v]]) if r[col[v]] else np.nan for r in body], dtype=np.float64) for v in VARIABLES
    }
    indicators = {
        name[5:]: np.array([int(r[i]) for r in body], dtype=np.int8)
        for name, i in col.items()
        if name.startswith("miss_")
    }
    first = body[0]
    return WellSeries(
        well_id=first[col["well_id"]],
        facility_id=first[col["facility_id"]],
        field_id=first[col["field_id"]],
        dates=[date.fromisoformat(r[col["date"]]) for r in body],
        values=values,
        indicators=indicators,
    )
