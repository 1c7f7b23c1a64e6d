"""Temporal and physics-informed features with leakage-safe scaling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, RegistryError, ValidationError
from .ingest import VARIABLES, WellSeries

VALUE = "value"
INDICATOR = "indicator"


@dataclass(frozen=True)
class FeatureConfig:
    k: int = 7
    epsilon: float = 1e-6
    raw_vars: tuple[str, ...] = VARIABLES
    rolling_vars: tuple[str, ...] = ("oil_vol", "wellhead_pressure", "gor")
    ratios: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"features.k must be >= 1, got {self.k}")
        if self.epsilon <= 0:
            raise ConfigError(f"features.epsilon must be > 0, got {self.epsilon}")
        known = set(self.raw_vars) | ({"gor", "water_cut"} if self.ratios else set())
        unknown = [v for v in self.rolling_vars if v not in known]
        if unknown:
            raise ConfigError(f"features.rolling_vars references unknown columns {unknown}")


@dataclass(frozen=True)
class TrainStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class FeatureMatrix:
    well_id: str
    timestamps: list[date]
    names: tuple[str, ...]
    values: np.ndarray
    kinds: tuple[str, ...]
    train_stats: TrainStats | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise RegistryError("feature registry names must be unique")
        if self.values.shape != (len(self.timestamps), len(self.names)):
            raise ValidationError(
                f"feature values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} timestamps x {len(self.names)} features"
            )

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise RegistryError(f"feature {name!r} not in registry for well {self.well_id!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    @property
    def indicator_mask(self) -> np.ndarray:
        return np.array([k == INDICATOR for k in self.kinds], dtype=bool)

    def __len__(self) -> int:
        return len(self.timestamps)


def compute_deltas(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First differences along time (axis 0), zero at the first step.

    Returns ``(deltas, valid)`` where ``valid`` is 0 at the first step and 1
    elsewhere.
    """
    x = np.asarray(values, dtype=np.float64)
    deltas = np.zeros_like(x)
    deltas[1:] = x[1:] - x[:-1]
    valid = np.ones(x.shape[0], dtype=np.float64)
    valid[:1] = 0.0
    return deltas, valid


def rolling_stats(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population std over windows of ``k`` steps.

    Steps earlier than ``k - 1`` use the truncated prefix window. Both
    statistics are computed in two passes per window for accuracy.
    """
    if k < 1:
        raise ConfigError(f"rolling window k must be >= 1, got {k}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    mean = np.zeros(n)
    std = np.zeros(n)
    for t in range(min(k - 1, n)):
        w = x[: t + 1]
        if w.min() == w.max():
            mean[t] = w[0]
            continue
        mean[t] = w.mean()
        std[t] = np.sqrt(np.mean((w - mean[t]) ** 2))
    if n >= k:
        windows = sliding_window_view(x, k)
        m = windows.mean(axis=1)
        s = np.sqrt(np.mean((windows - m[:, None]) ** 2, axis=1))
        # flat windows are exactly flat; rounding in the mean must not leak into std
        flat = windows.min(axis=1) == windows.max(axis=1)
        m[flat] = windows[flat, 0]
        s[flat] = 0.0
        mean[k - 1:] = m
        std[k - 1:] = s
    return mean, std


def production_ratios(oil, gas, water, epsilon: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Gas-oil ratio and water cut: ``Qg/(Qo+eps)`` and ``Qw/(Qo+Qw+eps)``."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    oil, gas, water = (np.asarray(a, dtype=np.float64) for a in (oil, gas, water))
    for name, a in (("oil", oil), ("gas", gas), ("water", water)):
        if (a < 0).any():
            raise ValidationError(f"negative {name} rate at index {int(np.flatnonzero(a < 0)[0])}")
    gor = gas / (oil + epsilon)
    water_cut = water / (oil + water + epsilon)
    return gor, water_cut


def feature_registry(cfg: FeatureConfig, indicator_vars: Sequence[str] = ()) -> tuple[tuple[str, ...], tuple[str, ...]]:
    names: list[str] = list(cfg.raw_vars)
    names += [f"d_{v}" for v in cfg.raw_vars]
    for v in cfg.rolling_vars:
        names += [f"rmean_{v}", f"rstd_{v}"]
    if cfg.ratios:
        names += ["gor", "water_cut"]
    n_values = len(names)
    names += [f"miss_{v}" for v in indicator_vars]
    names.append("delta_valid")
    kinds = (VALUE,) * n_values + (INDICATOR,) * (len(names) - n_values)
    return tuple(names), kinds


def assemble_feature_matrix(
    series: WellSeries, cfg: FeatureConfig = FeatureConfig(), indicator_vars: Sequence[str] | None = None
) -> FeatureMatrix:
    """Build the per-well feature table in registry order.

    ``indicator_vars`` fixes the set of missingness columns so every well of
    a dataset shares one registry; wells without a given indicator get zeros.
    """
    if indicator_vars is None:
        indicator_vars = sorted(series.indicators)
    names, kinds = feature_registry(cfg, indicator_vars)
    n = len(series)
    cols: dict[str, np.ndarray] = {}
    for v in cfg.raw_vars:
        x = series.values[v]
        if np.isnan(x).any():
            raise ValidationError(f"well {series.well_id!r}: {v} has missing values; impute first")
        cols[v] = x
    if n:
        deltas, valid = compute_deltas(np.column_stack([cols[v] for v in cfg.raw_vars]) if cfg.raw_vars else np.zeros((n, 0)))
    else:
        deltas, valid = np.zeros((0, len(cfg.raw_vars))), np.zeros(0)
    for j, v in enumerate(cfg.raw_vars):
        cols[f"d_{v}"] = deltas[:, j]
    if cfg.ratios:
        cols["gor"], cols["water_cut"] = production_ratios(
            series.values["oil_vol"], series.values["gas_vol"], series.values["water_vol"], cfg.epsilon
        )
    for v in cfg.rolling_vars:
        cols[f"rmean_{v}"], cols[f"rstd_{v}"] = rolling_stats(cols[v], cfg.k)
    for v in indicator_vars:
        flags = series.indicators.get(v)
        cols[f"miss_{v}"] = np.zeros(n) if flags is None else flags.astype(np.float64)
    cols["delta_valid"] = valid
    values = np.column_stack([cols[name] for name in names]) if n else np.zeros((0, len(names)))
    return FeatureMatrix(series.well_id, list(series.dates), names, values, kinds)


def fit_stats(matrix: FeatureMatrix, train_row_mask) -> TrainStats:
    mask = np.asarray(train_row_mask, dtype=bool)
    if mask.shape != (len(matrix),):
        raise ValidationError(f"train mask length {mask.shape} does not match {len(matrix)} rows")
    if not mask.any():
        raise ValidationError(f"empty training mask for well {matrix.well_id!r}")
    rows = matrix.values[mask]
    mu = rows.mean(axis=0)
    sd = np.sqrt(np.mean((rows - mu) ** 2, axis=0))
    flat = rows.min(axis=0) == rows.max(axis=0)
    mu[flat] = rows[0, flat]
    sd[flat] = 0.0
    ind = matrix.indicator_mask
    mu[ind] = 0.0
    sd[ind] = 1.0
    return TrainStats(mu, sd)


def apply_stats(matrix: FeatureMatrix, stats: TrainStats) -> FeatureMatrix:
    scaled = (matrix.values - stats.mean) / np.maximum(stats.std, 1e-8)
    ind = matrix.indicator_mask
    scaled[:, ind] = matrix.values[:, ind]
    return replace(matrix, values=scaled, train_stats=stats)


def standardize(matrix: FeatureMatrix, train_row_mask) -> FeatureMatrix:
    """z-score value columns with statistics from training rows only.

    Indicator columns pass through unchanged.
    """
    return apply_stats(matrix, fit_stats(matrix, train_row_mask))


def matrix_to_csv(matrix: FeatureMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["date", *matrix.names])
    for d, row in zip(matrix.timestamps, matrix.values):
        writer.writerow([d.isoformat(), *(repr(float(v)) for v in row)])
    return buf.getvalue()


def matrix_from_csv(text: str, well_id: str, kinds_from: Sequence[str] | None = None) -> FeatureMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    names = tuple(rows[0][1:])
    body = rows[1:]
    values = np.array([[float(c) for c in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(names))
    kinds = tuple(kinds_from) if kinds_from else tuple(
        INDICATOR if n.startswith("miss_") or n == "delta_valid" else VALUE for n in names
    )
    return FeatureMatrix(well_id, [date.fromisoformat(r[0]) for r in body], names, values, kinds)
