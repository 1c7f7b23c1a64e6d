"""Weak anomaly labels from physically motivated rules.

Three rule families look at raw (unscaled) engineered features:

* production drop: oil falls well below its recent trailing mean while the
  well is on stream;
* pressure-flow: oil change collapses while wellhead-pressure change spikes,
  both judged by causal z-scores;
* GOR deviation: GOR leaves its trailing band by more than ``gor_m`` sigmas.

A step is labelled anomalous when any rule fires.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ValidationError
from .features import FeatureMatrix

RULE_NAMES = ("production_drop", "pressure_flow", "gor_deviation")


@dataclass(frozen=True)
class RuleConfig:
    drop_frac: float = 0.40
    min_onstream_hrs: float = 12.0
    zscore_flow: float = 2.0
    zscore_pressure: float = 2.0
    gor_m: float = 3.0
    zscore_window: int = 30
    gor_min_history: int = 7

    def __post_init__(self):
        if not 0.0 < self.drop_frac < 1.0:
            raise ConfigError(f"labels.drop_frac must be in (0, 1), got {self.drop_frac}")
        for name in ("min_onstream_hrs", "zscore_flow", "zscore_pressure", "gor_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"labels.{name} must be > 0, got {getattr(self, name)}")
        if self.zscore_window < 2:
            raise ConfigError(f"labels.zscore_window must be >= 2, got {self.zscore_window}")
        if self.gor_min_history < 1:
            raise ConfigError(f"labels.gor_min_history must be >= 1, got {self.gor_min_history}")


@dataclass
class LabelFrame:
    well_id: str
    timestamps: list[date]
    y: np.ndarray
    rule_mask: np.ndarray
    rule_names: tuple[str, ...] = RULE_NAMES

    @property
    def anomaly_rate(self) -> float:
        return float(self.y.mean()) if self.y.size else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["date", "y", *self.rule_names])
        for i, d in enumerate(self.timestamps):
            writer.writerow([d.isoformat(), int(self.y[i]), *(int(v) for v in self.rule_mask[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, well_id: str) -> "LabelFrame":
        rows = list(csv.reader(io.StringIO(text)))
        names = tuple(rows[0][2:])
        body = rows[1:]
        mask = np.array([[int(c) for c in r[2:]] for r in body], dtype=np.int8).reshape(len(body), len(names))
        return cls(
            well_id,
            [date.fromisoformat(r[0]) for r in body],
            np.array([int(r[1]) for r in body], dtype=np.int8),
            mask,
            names,
        )


def _on_stream(features: FeatureMatrix, cfg: RuleConfig) -> np.ndarray:
    return features.column("on_stream_hrs") >= cfg.min_onstream_hrs


def rule_production_drop(features: FeatureMatrix, cfg: RuleConfig = RuleConfig()) -> np.ndarray:
    oil = features.column("oil_vol")
    trailing = features.column("rmean_oil_vol")
    on = _on_stream(features, cfg)
    fires = np.zeros(len(oil), dtype=np.int8)
    prev = trailing[:-1]
    hit = (oil[1:] < (1.0 - cfg.drop_frac) * prev) & (prev > 0) & on[1:]
    fires[1:] = hit
    return fires


def trailing_zscore(x: np.ndarray, window: int, first_valid: int = 1) -> np.ndarray:
    """z-score of ``x[t]`` against the ``window`` values strictly before ``t``.

    Only history from index ``first_valid`` on counts, and a full window is
    required. Undefined scores (short history, zero variance) are 0.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.zeros_like(x)
    start = first_valid + window
    if len(x) <= start:
        return z
    hist = sliding_window_view(x[first_valid:-1], window)
    mu = hist.mean(axis=1)
    sd = np.sqrt(np.mean((hist - mu[:, None]) ** 2, axis=1))
    flat = hist.min(axis=1) == hist.max(axis=1)
    target = x[start:]
    ok = ~flat & (sd > 0)
    z_tail = np.zeros_like(target)
    z_tail[ok] = (target[ok] - mu[ok]) / sd[ok]
    z[start:] = z_tail
    return z


def rule_pressure_flow(features: FeatureMatrix, cfg: RuleConfig = RuleConfig()) -> np.ndarray:
    z_oil = trailing_zscore(features.column("d_oil_vol"), cfg.zscore_window)
    z_whp = trailing_zscore(features.column("d_wellhead_pressure"), cfg.zscore_window)
    hit = (z_oil <= -cfg.zscore_flow) & (z_whp >= cfg.zscore_pressure) & _on_stream(features, cfg)
    return hit.astype(np.int8)


def rule_gor_deviation(features: FeatureMatrix, cfg: RuleConfig = RuleConfig()) -> np.ndarray:
    gor = features.column("gor")
    mu = features.column("rmean_gor")
    sd = features.column("rstd_gor")
    on = _on_stream(features, cfg)
    fires = np.zeros(len(gor), dtype=np.int8)
    t0 = cfg.gor_min_history
    if len(gor) > t0:
        prev_mu, prev_sd = mu[t0 - 1:-1], sd[t0 - 1:-1]
        hit = (np.abs(gor[t0:] - prev_mu) > cfg.gor_m * prev_sd) & (prev_sd > 0) & on[t0:]
        fires[t0:] = hit
    return fires


def aggregate_labels(
    rule_masks: Sequence[np.ndarray],
    well_id: str = "",
    timestamps: Sequence[date] | None = None,
    rule_names: Sequence[str] | None = None,
) -> LabelFrame:
    masks = [np.asarray(m, dtype=np.int8) for m in rule_masks]
    lengths = {m.shape[0] for m in masks}
    if len(lengths) > 1:
        raise ValidationError(f"rule masks have mismatched lengths {sorted(lengths)}")
    n = lengths.pop() if lengths else (len(timestamps) if timestamps is not None else 0)
    stacked = np.column_stack(masks) if masks else np.zeros((n, 0), dtype=np.int8)
    y = (stacked.sum(axis=1) >= 1).astype(np.int8)
    names = tuple(rule_names) if rule_names is not None else tuple(f"rule_{i}" for i in range(len(masks)))
    ts = list(timestamps) if timestamps is not None else [None] * n
    return LabelFrame(well_id, ts, y, stacked, names)


def label_well(features: FeatureMatrix, cfg: RuleConfig = RuleConfig()) -> LabelFrame:
    masks = [
        rule_production_drop(features, cfg),
        rule_pressure_flow(features, cfg),
        rule_gor_deviation(features, cfg),
    ]
    return aggregate_labels(masks, features.well_id, features.timestamps, RULE_NAMES)
