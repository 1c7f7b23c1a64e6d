"""Synthetic production networks with planted, logged anomalies.

Each well follows an exponential decline with multiplicative noise, a
logistic water-cut ramp and a slowly rising GOR. Wellhead pressure moves
against the deterministic rate trend and carries its own daily noise.
Planned maintenance days and rare unplanned shut-ins set on-stream hours and
volumes to zero.

Anomaly kinds and their signatures:

* ``theft``: metered oil and associated gas scaled by ``1 - magnitude``;
  pressures, temperature and choke untouched.
* ``inefficiency``: wellhead pressure starts climbing two days before the
  rates decline linearly to ``1 - magnitude`` over four days, then holds.
* ``facility_event``: one leader well on a facility shows the same pressure
  build-up, then steps down; its co-facility wells follow one to three days
  later. The truth mask covers the whole span on every member well.
* ``sensor_dropout``: one sensor variable goes missing for the span.

All randomness comes from named SplitMix64 streams (see :mod:`prodnet.rng`),
so a seed gives the same dataset on any platform.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date, timedelta
from functools import partial
from typing import Mapping

import numpy as np

from .errors import ConfigError, ValidationError
from .ingest import DEFAULT_COLUMN_MAP, SENSOR_VARS, VARIABLES, WellSeries
from .parallel import pmap
from .rng import Stream
from .topology import Topology

ANOMALY_KINDS = ("theft", "inefficiency", "sensor_dropout", "facility_event")
PRECURSOR_DAYS = 2
DECLINE_DAYS = 4
WARMUP_DAYS = 45
EVENT_GAP = 7


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    rate: float
    magnitude: float = 0.5
    duration: int = 8

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"anomaly kind must be one of {ANOMALY_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"anomaly rate must be in [0, 1], got {self.rate}")
        if not 0.0 <= self.magnitude < 1.0:
            raise ConfigError(f"anomaly magnitude must be in [0, 1), got {self.magnitude}")
        if self.duration < 1:
            raise ConfigError(f"anomaly duration must be >= 1, got {self.duration}")
        if self.kind in ("inefficiency", "facility_event") and self.duration < PRECURSOR_DAYS + DECLINE_DAYS:
            raise ConfigError(f"{self.kind} duration must be >= {PRECURSOR_DAYS + DECLINE_DAYS}")


DEFAULT_ANOMALIES = (
    AnomalySpec("theft", 0.03, 0.8, 8),
    AnomalySpec("inefficiency", 0.04, 0.6, 10),
    AnomalySpec("sensor_dropout", 0.01, 0.0, 6),
    AnomalySpec("facility_event", 0.04, 0.7, 10),
)


@dataclass(frozen=True)
class SynthConfig:
    n_fields: int = 1
    n_facilities: int = 3  # per field
    wells_per_facility: int = 4
    T: int = 730
    start_date: date = date(2014, 1, 1)
    decline_rate: float = 5e-4
    q0_range: tuple[float, float] = (600.0, 2000.0)
    noise_cv: float = 0.03
    whp_noise: float = 0.5
    downtime_prob: float = 0.004
    maintenance_every: int = 60  # planned one-day shut-in period; 0 disables
    shift_start: float = 0.7
    shift_factor: float = 3.0
    anomalies: tuple[AnomalySpec, ...] = DEFAULT_ANOMALIES
    seed: int = 0

    def __post_init__(self):
        for name in ("n_fields", "n_facilities", "wells_per_facility", "T"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be >= 1, got {getattr(self, name)}")
        if self.decline_rate < 0:
            raise ConfigError(f"synth.decline_rate must be >= 0, got {self.decline_rate}")
        lo, hi = self.q0_range
        if not 0 < lo <= hi:
            raise ConfigError(f"synth.q0_range must satisfy 0 < low <= high, got {self.q0_range}")
        if self.noise_cv < 0 or self.whp_noise < 0:
            raise ConfigError("synth noise levels must be >= 0")
        if self.maintenance_every < 0:
            raise ConfigError(f"synth.maintenance_every must be >= 0, got {self.maintenance_every}")
        if not 0.0 <= self.downtime_prob <= 1.0:
            raise ConfigError(f"synth.downtime_prob must be in [0, 1], got {self.downtime_prob}")
        if not 0.0 <= self.shift_start <= 1.0 or self.shift_factor <= 0:
            raise ConfigError("synth.shift_start must be in [0, 1] and shift_factor > 0")


@dataclass(frozen=True)
class Event:
    target: str
    kind: str
    start: date
    end: date  # inclusive
    magnitude: float
    wells: tuple[str, ...]
    detail: str = ""


@dataclass
class GroundTruthLog:
    events: list[Event] = field(default_factory=list)
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    dates: list[date] = field(default_factory=list)

    def kind_fraction(self, kind: str) -> float:
        days = sum(((e.end - e.start).days + 1) * len(e.wells) for e in self.events if e.kind == kind)
        total = sum(len(m) for m in self.masks.values())
        return days / total if total else 0.0

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target", "kind", "start", "end", "magnitude", "wells", "detail"])
        for e in self.events:
            w.writerow([e.target, e.kind, e.start.isoformat(), e.end.isoformat(), repr(e.magnitude), " ".join(e.wells), e.detail])
        return buf.getvalue()

    def mask_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "well_id", "anomaly"])
        for well in sorted(self.masks):
            for d, v in zip(self.dates, self.masks[well]):
                w.writerow([d.isoformat(), well, int(v)])
        return buf.getvalue()

    @staticmethod
    def masks_from_csv(text: str) -> dict[str, dict[date, int]]:
        out: dict[str, dict[date, int]] = {}
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            out.setdefault(row[1], {})[date.fromisoformat(row[0])] = int(row[2])
        return out


def _letters(i: int) -> str:
    s = ""
    i += 1
    while i:
        i, rem = divmod(i - 1, 26)
        s = chr(65 + rem) + s
    return s


def make_topology(cfg: SynthConfig) -> Topology:
    rows = []
    for f in range(cfg.n_fields):
        fld = f"FIELD-{_letters(f)}"
        for k in range(cfg.n_facilities):
            fac = f"FAC-{_letters(f)}{k + 1}"
            for j in range(cfg.wells_per_facility):
                rows.append((f"W-{_letters(f)}{k + 1}-{j + 1}", fac, fld))
    return Topology.from_rows(rows)


def _clean_well(cfg: SynthConfig, well: str) -> tuple[dict[str, np.ndarray], np.ndarray]:
    s = Stream(cfg.seed, f"clean/{well}")
    T = cfg.T
    t = np.arange(T, dtype=np.float64)
    q0 = s.uniform(None, *cfg.q0_range)
    trend = q0 * np.exp(-cfg.decline_rate * t)
    oil = trend * (1.0 + cfg.noise_cv * s.normal(T))
    oil = np.maximum(oil, 0.0)

    # GOR rises steadily as reservoir pressure falls; a noiseless, nearly
    # linear drift keeps the trailing-band GOR rule quiet on clean data
    g0 = s.uniform(None, 80.0, 160.0)
    drift = s.uniform(None, 0.1, 0.5)
    gor = g0 * np.exp(drift * t / T)
    gas = oil * gor

    # every well makes some water from day one; breakthrough lifts the cut
    # early enough that later levels stay within the range seen before
    wc0 = s.uniform(None, 0.05, 0.15)
    wc_max = s.uniform(None, 0.3, 0.6)
    t_break = s.uniform(None, 0.1, 0.5) * T
    width = s.uniform(None, 60.0, 150.0)
    wc = wc0 + (wc_max - wc0) / (1.0 + np.exp(-(t - t_break) / width))
    water = oil * wc / (1.0 - wc)

    p_ref = s.uniform(None, 25.0, 60.0)
    kappa = s.uniform(None, 8.0, 20.0)
    whp = p_ref + kappa * (1.0 - trend / q0) + cfg.whp_noise * s.normal(T)
    bhp = whp + s.uniform(None, 120.0, 180.0) + 1.5 * s.normal(T)
    wht = 40.0 + 40.0 * trend / q0 + 0.4 * s.normal(T)
    choke = s.uniform(None, 30.0, 70.0) + 0.3 * s.normal(T)
    hrs = np.full(T, 24.0)

    down = s.uniform(T) < cfg.downtime_prob
    if cfg.maintenance_every:
        phase = int(s.integers(0, cfg.maintenance_every))
        down[phase::cfg.maintenance_every] = True
    down[:WARMUP_DAYS] = False
    hrs[down] = 0.0
    for a in (oil, gas, water):
        a[down] = 0.0
    whp[down] += 25.0  # shut-in pressure build-up
    wht[down] -= 20.0
    values = {
        "oil_vol": oil,
        "gas_vol": gas,
        "water_vol": water,
        "on_stream_hrs": hrs,
        "downhole_pressure": bhp,
        "wellhead_pressure": whp,
        "wellhead_temp": wht,
        "choke_size": choke,
    }
    return values, down


def generate_clean(cfg: SynthConfig, jobs: int = 1) -> tuple[Topology, dict[str, WellSeries]]:
    topo = make_topology(cfg)
    dates = [cfg.start_date + timedelta(days=i) for i in range(cfg.T)]
    wells = sorted(topo.wells)
    data = {}
    for well, (values, _) in zip(wells, pmap(partial(_clean_well, cfg), wells, jobs)):
        fac, fld = topo.wells[well]
        data[well] = WellSeries(well, fac, fld, list(dates), values)
    return topo, data


class _Calendar:
    """Per-well occupancy so events never overlap (with a gap between them)."""

    def __init__(self, wells, T: int):
        self.busy = {w: np.zeros(T, dtype=bool) for w in wells}
        self.T = T

    def free(self, wells, start: int, length: int) -> bool:
        lo, hi = max(0, start - EVENT_GAP), min(self.T, start + length + EVENT_GAP)
        return all(not self.busy[w][lo:hi].any() for w in wells)

    def take(self, wells, start: int, length: int) -> None:
        for w in wells:
            self.busy[w][start:start + length] = True


def _start_sampler(cfg: SynthConfig, length: int):
    lo, hi = WARMUP_DAYS, cfg.T - length
    if hi <= lo:
        raise ConfigError(f"series of {cfg.T} days too short for events of {length} days")
    starts = np.arange(lo, hi + 1)
    weight = np.where(starts >= cfg.shift_start * cfg.T, cfg.shift_factor, 1.0)
    cdf = np.cumsum(weight) / weight.sum()

    def draw(u: float) -> int:
        return int(starts[min(int(np.searchsorted(cdf, u, side="right")), len(starts) - 1)])

    return draw


def _n_events(rate: float, T: int, duration: int, u: float) -> int:
    expected = rate * T / duration
    return int(np.floor(expected + u))


def _place(cal: _Calendar, wells, length: int, draw, stream: Stream, what: str, retries: int = 200) -> int:
    for _ in range(retries):
        start = draw(stream.uniform())
        if cal.free(wells, start, length):
            cal.take(wells, start, length)
            return start
    raise ValidationError(f"could not place {what} without overlapping other events after {retries} tries")


def inject_anomalies(data: Mapping[str, WellSeries], cfg: SynthConfig, topology: Topology) -> tuple[dict[str, WellSeries], GroundTruthLog]:
    """Plant the configured anomalies; returns perturbed copies and the truth log."""
    wells = sorted(data)
    T = cfg.T
    dates = data[wells[0]].dates
    out = {w: WellSeries(s.well_id, s.facility_id, s.field_id, list(s.dates), {v: a.copy() for v, a in s.values.items()})
           for w, s in data.items()}
    masks = {w: np.zeros(T, dtype=np.int8) for w in wells}
    events: list[Event] = []
    cal = _Calendar(wells, T)
    order = {k: i for i, k in enumerate(("facility_event", "inefficiency", "theft", "sensor_dropout"))}
    specs = sorted(cfg.anomalies, key=lambda a: order[a.kind])

    def span(start, length):
        return dates[start], dates[start + length - 1]

    for spec in specs:
        if spec.rate == 0:
            continue
        L = spec.duration
        draw = _start_sampler(cfg, L)
        if spec.kind == "facility_event":
            for fac in sorted(topology.facilities):
                members = [w for w in topology.wells_of(fac) if w in out]
                if not members:
                    continue
                s = Stream(cfg.seed, f"anomaly/facility_event/{fac}")
                for _ in range(_n_events(spec.rate, T, L, s.uniform())):
                    start = _place(cal, members, L, draw, s, f"facility_event on {fac}")
                    leader = members[s.integers(0, len(members))]
                    lags = {}
                    for w in members:
                        lag = 0 if w == leader else int(s.integers(1, 4))
                        lags[w] = lag
                        _facility_effect(out[w].values, start, L, spec.magnitude, lag, w == leader)
                        masks[w][start:start + L] = 1
                    detail = "leader=" + leader + ";" + ";".join(f"{w}:{lags[w]}" for w in members if w != leader)
                    events.append(Event(fac, spec.kind, *span(start, L), spec.magnitude, tuple(members), detail))
            continue
        for w in wells:
            s = Stream(cfg.seed, f"anomaly/{spec.kind}/{w}")
            for _ in range(_n_events(spec.rate, T, L, s.uniform())):
                start = _place(cal, [w], L, draw, s, f"{spec.kind} on {w}")
                vals = out[w].values
                detail = ""
                if spec.kind == "theft":
                    on = vals["on_stream_hrs"][start:start + L] > 0
                    for v in ("oil_vol", "gas_vol"):
                        vals[v][start:start + L][on] *= 1.0 - spec.magnitude
                elif spec.kind == "inefficiency":
                    _inefficiency_effect(vals, start, L, spec.magnitude)
                else:
                    var = SENSOR_VARS[s.integers(0, len(SENSOR_VARS))]
                    vals[var][start:start + L] = np.nan
                    detail = var
                masks[w][start:start + L] = 1
                events.append(Event(w, spec.kind, *span(start, L), spec.magnitude, (w,), detail))
    events.sort(key=lambda e: (e.start, e.target, e.kind))
    return out, GroundTruthLog(events, masks, list(dates))


def _inefficiency_effect(vals, start: int, L: int, m: float, whp_rate: float = 3.0) -> None:
    on = vals["on_stream_hrs"][start:start + L] > 0
    factor = np.ones(L)
    decline = np.arange(1, DECLINE_DAYS + 1) / DECLINE_DAYS
    factor[PRECURSOR_DAYS:PRECURSOR_DAYS + DECLINE_DAYS] = 1.0 - m * decline
    factor[PRECURSOR_DAYS + DECLINE_DAYS:] = 1.0 - m
    for v in ("oil_vol", "gas_vol", "water_vol"):
        vals[v][start:start + L] *= np.where(on, factor, 1.0)
    ramp = whp_rate * np.minimum(np.arange(1, L + 1), PRECURSOR_DAYS + DECLINE_DAYS)
    vals["wellhead_pressure"][start:start + L] += ramp
    vals["downhole_pressure"][start:start + L] += ramp


def _facility_effect(vals, start: int, L: int, m: float, lag: int, leader: bool, whp_rate: float = 3.0) -> None:
    on = vals["on_stream_hrs"][start:start + L] > 0
    step_at = PRECURSOR_DAYS + lag
    factor = np.ones(L)
    factor[step_at:] = 1.0 - m
    for v in ("oil_vol", "gas_vol", "water_vol"):
        vals[v][start:start + L] *= np.where(on, factor, 1.0)
    bump = np.zeros(L)
    if leader:
        bump[:PRECURSOR_DAYS] = whp_rate * np.arange(1, PRECURSOR_DAYS + 1)
    bump[step_at:] = whp_rate * (PRECURSOR_DAYS + 3)
    vals["wellhead_pressure"][start:start + L] += bump
    vals["downhole_pressure"][start:start + L] += bump


def generate(cfg: SynthConfig, jobs: int = 1) -> tuple[Topology, dict[str, WellSeries], GroundTruthLog]:
    topo, clean = generate_clean(cfg, jobs)
    data, log = inject_anomalies(clean, cfg, topo)
    return topo, data, log


def export_volve_schema(data: Mapping[str, WellSeries], column_map: Mapping[str, str] | None = None) -> str:
    """Production table in the ingestion layout, one row per well-day."""
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cmap.update(column_map)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([cmap["date"], cmap["well_id"], *(cmap[v] for v in VARIABLES)])
    for well in sorted(data):
        s = data[well]
        for i, d in enumerate(s.dates):
            row = [d.isoformat(), well]
            for v in VARIABLES:
                x = s.values[v][i]
                row.append("" if np.isnan(x) else repr(float(x)))
            w.writerow(row)
    return buf.getvalue()
