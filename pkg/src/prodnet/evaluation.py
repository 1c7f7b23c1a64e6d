"""Exact ranking and thresholded metrics, curves and comparison reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError

TAU = 0.5


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValidationError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ValidationError("scores must be finite")
    return s, y.astype(np.int64)


def _require_both_classes(y: np.ndarray) -> None:
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValidationError("ROC-AUC is undefined when only one class is present")


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2."""
    s, y = _check(scores, labels)
    _require_both_classes(y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_at_threshold(scores, labels, tau: float = TAU) -> Confusion:
    """Counts for the rule ``predict 1 iff score >= tau``.

    Precision with no flagged samples is reported as 0 and marked undefined.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {tau}")
    s, y = _check(scores, labels)
    pred = s >= tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Confusion(tp, fp, tn, fn, precision, recall, f1, tp + fp > 0)


def curves(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC rows ``(threshold, fpr, tpr)`` and PR rows ``(threshold, precision, recall)``.

    One row per distinct score, thresholds descending. The ROC table starts
    at (0, 0) with threshold +inf.
    """
    s, y = _check(scores, labels)
    _require_both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    ss, ys = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(ss)), ss.size - 1]
    tp = np.cumsum(ys)[last].astype(np.float64)
    fp = (last + 1 - tp).astype(np.float64)
    n_pos, n_neg = float(y.sum()), float(y.size - y.sum())
    thresholds = ss[last]
    roc = np.column_stack([np.r_[np.inf, thresholds], np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]])
    pr = np.column_stack([thresholds, tp / (tp + fp), tp / n_pos])
    return roc, pr


def trapezoid_auc(roc: np.ndarray) -> float:
    x, y = roc[:, 1], roc[:, 2]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def curve_csv(rows: np.ndarray, header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()


@dataclass
class EvalReport:
    model_name: str
    split_kind: str
    roc_auc: float
    precision_anomaly: float
    recall_anomaly: float
    f1_anomaly: float
    confusion: dict
    tau: float = TAU
    n_samples: int = 0
    anomaly_rate_train: float | None = None
    anomaly_rate_test: float | None = None
    seed: int | None = None
    fingerprint: str | None = None
    roc_curve: list = field(default_factory=list, repr=False)
    pr_curve: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate(model_name: str, split_kind: str, scores, labels, tau: float = TAU, **meta) -> EvalReport:
    s, y = _check(scores, labels)
    conf = confusion_at_threshold(s, y, tau)
    roc, pr = curves(s, y)
    return EvalReport(
        model_name=model_name,
        split_kind=split_kind,
        roc_auc=roc_auc(s, y),
        precision_anomaly=conf.precision,
        recall_anomaly=conf.recall,
        f1_anomaly=conf.f1,
        confusion={"TP": conf.tp, "FP": conf.fp, "TN": conf.tn, "FN": conf.fn},
        tau=tau,
        n_samples=int(s.size),
        # inf is not valid JSON; the leading ROC row is stored with threshold None
        roc_curve=[[None if np.isinf(t) else float(t), float(a), float(b)] for t, a, b in roc],
        pr_curve=[[float(t), float(a), float(b)] for t, a, b in pr],
        **meta,
    )


def build_report(runs: Sequence[tuple[str, np.ndarray, np.ndarray]], split_kind: str, tau: float = TAU, **meta) -> list[EvalReport]:
    """One report per ``(model_name, scores, labels)``; all runs must share one sample set."""
    sizes = {np.asarray(s).size for _, s, _ in runs}
    if len(sizes) > 1:
        raise ValidationError(f"runs in one comparison have different sample counts {sorted(sizes)}")
    return [evaluate(name, split_kind, s, y, tau, **meta) for name, s, y in runs]


TABLE_HEADER = ("Model", "ROC-AUC", "Precision (Anomaly)", "Recall (Anomaly)", "F1-score")


def comparison_table(reports: Sequence[EvalReport], title: str | None = None) -> str:
    rows = [TABLE_HEADER] + [
        (r.model_name, f"{r.roc_auc:.3f}", f"{r.precision_anomaly:.3f}", f"{r.recall_anomaly:.3f}", f"{r.f1_anomaly:.3f}")
        for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_HEADER))]
    lines = [title] if title else []
    for k, row in enumerate(rows):
        lines.append(" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1) + "\n"


def reports_from_json(text: str) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(text)]


def curve_svg(series: Sequence[tuple[str, np.ndarray]], x_label: str, y_label: str, size: int = 320) -> str:
    """Minimal static line chart; each series is an ``(n, 2)`` array in [0, 1]^2."""
    pad = 40
    span = size - 2 * pad
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#444"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle">{x_label}</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" transform="rotate(-90 12 {size / 2})">{y_label}</text>',
    ]
    for k, (name, pts) in enumerate(series):
        pts = np.asarray(pts, dtype=np.float64)
        coords = " ".join(f"{pad + x * span:.2f},{pad + (1 - y) * span:.2f}" for x, y in pts)
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        parts.append(f'<text x="{pad + 6}" y="{pad + 14 + 12 * k}" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
