"""Causal sliding windows and train/test partitioning."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .features import FeatureMatrix
from .labels import LabelFrame


@dataclass
class WindowSample:
    """Input rows ``t-r .. t-1`` of one well and the label at ``t``."""

    well_id: str
    t: int
    date: date
    X: np.ndarray
    y: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.well_id, self.t)


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "time"
    ratio: float = 0.7
    cutoff_date: date | None = None
    seed: int | None = 0

    def __post_init__(self):
        if self.kind not in ("random", "time"):
            raise ConfigError(f"split.kind must be 'random' or 'time', got {self.kind!r}")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"split.ratio must be in (0, 1), got {self.ratio}")
        if self.kind == "random" and self.seed is None:
            raise ConfigError("random split requires a seed")


def make_windows(features: FeatureMatrix, labels: LabelFrame, r: int) -> list[WindowSample]:
    if r < 1:
        raise ConfigError(f"window length r must be >= 1, got {r}")
    if len(features) != len(labels.y) or list(features.timestamps) != list(labels.timestamps):
        raise ValidationError(f"features and labels of well {features.well_id!r} are not aligned")
    vals = features.values
    return [
        WindowSample(features.well_id, t, features.timestamps[t], vals[t - r:t].copy(), int(labels.y[t]))
        for t in range(r, len(features))
    ]


def anomaly_rate(samples: Sequence[WindowSample]) -> float:
    return float(np.mean([s.y for s in samples])) if samples else 0.0


def split_report(train: Sequence[WindowSample], test: Sequence[WindowSample], kind: str, cutoff: date | None = None) -> dict:
    def span(samples):
        if not samples:
            return None
        ds = [s.date for s in samples]
        return [min(ds).isoformat(), max(ds).isoformat()]

    return {
        "kind": kind,
        "cutoff": cutoff.isoformat() if cutoff else None,
        "n_train": len(train),
        "n_test": len(test),
        "positives_train": int(sum(s.y for s in train)),
        "positives_test": int(sum(s.y for s in test)),
        "anomaly_rate_train": anomaly_rate(train),
        "anomaly_rate_test": anomaly_rate(test),
        "train_dates": span(train),
        "test_dates": span(test),
    }


def random_split(samples: Sequence[WindowSample], spec: SplitSpec) -> tuple[list[WindowSample], list[WindowSample]]:
    """Seeded uniform shuffle of windows, then cut at ``spec.ratio``.

    Overlapping windows of one well can land on both sides; this is the
    stationary benchmark, not the deployment setting.
    """
    if spec.kind != "random":
        raise ConfigError("random_split called with a non-random SplitSpec")
    n = len(samples)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.ratio * n))
    if n_train == 0 or n_train == n:
        raise ValidationError(f"random split of {n} samples at ratio {spec.ratio} leaves an empty side")
    train = [samples[i] for i in sorted(order[:n_train])]
    test = [samples[i] for i in sorted(order[n_train:])]
    return train, test


def resolve_cutoff(samples: Sequence[WindowSample], spec: SplitSpec) -> date:
    dates = sorted({s.date for s in samples})
    if not dates:
        raise ValidationError("no samples to split")
    if spec.cutoff_date is not None:
        cutoff = spec.cutoff_date
    else:
        cutoff = dates[min(int(spec.ratio * len(dates)), len(dates) - 1)]
    if cutoff <= dates[0] or cutoff > dates[-1]:
        raise ValidationError(
            f"cutoff {cutoff.isoformat()} outside data range {dates[0].isoformat()}..{dates[-1].isoformat()}"
        )
    return cutoff


def time_split(samples: Sequence[WindowSample], spec: SplitSpec) -> tuple[list[WindowSample], list[WindowSample], dict]:
    """Targets dated before the cutoff train; the rest test."""
    if spec.kind != "time":
        raise ConfigError("time_split called with a non-time SplitSpec")
    cutoff = resolve_cutoff(samples, spec)
    train = [s for s in samples if s.date < cutoff]
    test = [s for s in samples if s.date >= cutoff]
    return train, test, split_report(train, test, "time", cutoff)


def split_samples(samples: Sequence[WindowSample], spec: SplitSpec):
    if spec.kind == "time":
        return time_split(samples, spec)
    train, test = random_split(samples, spec)
    return train, test, split_report(train, test, "random")


def validation_split(train: Sequence[WindowSample], kind: str, frac: float = 0.15, seed: int = 0):
    """Hold out ``frac`` of the training windows for early stopping.

    Time splits hold out the latest-dated tail; random splits a seeded subset.
    """
    n = len(train)
    n_val = int(round(frac * n))
    if n_val == 0 or n_val >= n:
        return list(train), []
    if kind == "time":
        order = sorted(range(n), key=lambda i: (train[i].date, train[i].well_id))
    else:
        order = list(np.random.default_rng(seed + 7919).permutation(n))
    fit_idx, val_idx = sorted(order[: n - n_val]), sorted(order[n - n_val:])
    return [train[i] for i in fit_idx], [train[i] for i in val_idx]


@dataclass
class WindowArrays:
    """Stacked windows ready for batched model evaluation."""

    X: np.ndarray
    y: np.ndarray
    well_ids: list[str]
    t: np.ndarray
    dates: list[date]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "WindowArrays":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowArrays(
            self.X[idx], self.y[idx], [self.well_ids[i] for i in idx], self.t[idx], [self.dates[i] for i in idx]
        )


def stack(samples: Sequence[WindowSample]) -> WindowArrays:
    if not samples:
        raise ValidationError("cannot stack an empty sample list")
    return WindowArrays(
        X=np.stack([s.X for s in samples]),
        y=np.array([s.y for s in samples], dtype=np.float64),
        well_ids=[s.well_id for s in samples],
        t=np.array([s.t for s in samples], dtype=np.int64),
        dates=[s.date for s in samples],
    )
