"""Imbalance-weighted training with Adam, early stopping and checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, NumericError, ValidationError
from .evaluation import confusion_at_threshold, roc_auc
from .graph import ProductionGraph
from .models import ModelConfig, Params, forward

CHECKPOINT_FORMAT = "prodnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 100
    batch_size: int = 64
    beta: float | None = None  # None means N_neg / N_pos
    early_stop_patience: int = 10
    val_frac: float = 0.15
    seed: int = 0
    clamp_eps: float = 1e-7

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError(f"train.beta must be > 0, got {self.beta}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"train.early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if not 0.0 <= self.val_frac < 1.0:
            raise ConfigError(f"train.val_frac must be in [0, 1), got {self.val_frac}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigError(f"train.clamp_eps must be in (0, 0.5), got {self.clamp_eps}")


@dataclass
class ModelInputs:
    """Stacked model inputs: windows, labels and (for graph models) node snapshots."""

    X: np.ndarray
    y: np.ndarray
    node_feats: np.ndarray | None = None
    well_pos: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ModelInputs":
        idx = np.asarray(idx, dtype=np.int64)
        return ModelInputs(
            self.X[idx],
            self.y[idx],
            None if self.node_feats is None else self.node_feats[idx],
            None if self.well_pos is None else self.well_pos[idx],
        )


def weighted_bce(y_hat, y, beta: float = 1.0, clamp_eps: float = 1e-7) -> Tensor:
    """Mean of ``-[beta*y*log(p) + (1-y)*log(1-p)]`` with ``p`` clamped away from 0 and 1."""
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    p = ad.clip(ad.tensor(y_hat), clamp_eps, 1.0 - clamp_eps)
    y = np.asarray(y, dtype=np.float64)
    pos = ad.tensor(beta * y) * ad.log(p)
    neg = ad.tensor(1.0 - y) * ad.log(1.0 - p)
    return ad.neg(ad.mean(pos + neg))


def bce(y_hat, y, clamp_eps: float = 1e-7) -> Tensor:
    """Unweighted binary cross-entropy, the ``beta = 1`` reference."""
    p = ad.clip(ad.tensor(y_hat), clamp_eps, 1.0 - clamp_eps)
    y = np.asarray(y, dtype=np.float64)
    return ad.neg(ad.mean(ad.tensor(y) * ad.log(p) + ad.tensor(1.0 - y) * ad.log(1.0 - p)))


def compute_beta(labels) -> float:
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            f"cannot derive beta from {n_pos} positive and {n_neg} negative labels; set train.beta explicitly"
        )
    return n_neg / n_pos


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainingDiverged(NumericError):
    """Non-finite loss; carries the last finite parameters and the history so far."""

    def __init__(self, message: str, params: Params, history: list[dict]):
        super().__init__(message)
        self.params = params
        self.history = history


def snapshot(params: Params) -> Params:
    return {k: ad.parameter(v.data.copy()) for k, v in params.items()}


def predict(cfg: ModelConfig, params: Params, inputs: ModelInputs, graph: ProductionGraph | None = None,
            batch_size: int = 512) -> np.ndarray:
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    out = []
    for start in range(0, len(inputs), batch_size):
        b = inputs.subset(np.arange(start, min(start + batch_size, len(inputs))))
        out.append(forward(cfg, frozen, b.X, b.node_feats, b.well_pos, graph).data)
    return np.concatenate(out) if out else np.zeros(0)


def _val_metrics(cfg, params, val: ModelInputs, graph, beta, clamp_eps) -> dict:
    scores = predict(cfg, params, val, graph)
    loss = weighted_bce(scores, val.y, beta, clamp_eps).item()
    f1 = confusion_at_threshold(scores, val.y, 0.5).f1
    try:
        auc = roc_auc(scores, val.y)
    except ValidationError:
        auc = float("nan")
    return {"val_loss": loss, "val_f1": f1, "val_auc": auc}


def train(cfg: ModelConfig, params: Params, train_set: ModelInputs, val_set: ModelInputs | None,
          tcfg: TrainConfig, graph: ProductionGraph | None = None) -> tuple[Params, list[dict]]:
    """Mini-batch Adam on the weighted BCE.

    The kept parameters are those of the best validation epoch, ranked by F1
    at 0.5 and then by validation loss. Training stops after
    ``early_stop_patience`` epochs without improvement. Without a validation
    set the final parameters are kept.
    """
    if len(train_set) == 0:
        raise ValidationError("empty training set")
    if cfg.uses_graph and graph is None:
        raise ConfigError("graph model needs a production graph")
    beta = tcfg.beta if tcfg.beta is not None else compute_beta(train_set.y)
    names = list(params)
    plist = [params[n] for n in names]
    opt = Adam(plist, tcfg.lr)
    rng = np.random.default_rng(tcfg.seed)
    history: list[dict] = []
    best: tuple[float, float] | None = None
    best_params = snapshot(params)
    stale = 0
    n = len(train_set)
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tcfg.batch_size):
            batch = train_set.subset(order[start:start + tcfg.batch_size])
            try:
                y_hat = forward(cfg, params, batch.X, batch.node_feats, batch.well_pos, graph)
                loss = weighted_bce(y_hat, batch.y, beta, tcfg.clamp_eps)
                grads = ad.backward(loss, plist)
            except NumericError as exc:
                raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", best_params, history) from exc
            opt.step(grads)
            total += loss.item() * len(batch)
        row = {"epoch": epoch, "train_loss": total / n}
        if val_set is not None and len(val_set):
            row.update(_val_metrics(cfg, params, val_set, graph, beta, tcfg.clamp_eps))
            key = (row["val_f1"], -row["val_loss"])
            if best is None or key > best:
                best, stale = key, 0
                best_params = snapshot(params)
            else:
                stale += 1
        else:
            best_params = snapshot(params)
        history.append(row)
        if val_set is not None and len(val_set) and stale >= tcfg.early_stop_patience:
            break
    for k in names:
        params[k].data = best_params[k].data.copy()
    return params, history


def history_csv(history: Sequence[dict]) -> str:
    cols = ["epoch", "train_loss", "val_loss", "val_f1", "val_auc"]
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(repr(row[c]) if c in row else "" for c in cols))
    return "\n".join(lines) + "\n"


# -- checkpoints -------------------------------------------------------------------

def fingerprint(config: dict, registry: Sequence[str]) -> str:
    blob = json.dumps({"config": config, "registry": list(registry)}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_text(params: Params, model_cfg: ModelConfig, registry: Sequence[str], config: dict | None = None) -> str:
    config = {"model": asdict(model_cfg), **(config or {})}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": fingerprint(config, registry),
        "config": config,
        "registry": list(registry),
        "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.data.reshape(-1)]} for k, v in params.items()},
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def save_checkpoint(path, params: Params, model_cfg: ModelConfig, registry: Sequence[str], config: dict | None = None) -> None:
    atomic_write(path, checkpoint_text(params, model_cfg, registry, config))


@dataclass
class Checkpoint:
    params: Params
    model: ModelConfig
    registry: list[str]
    config: dict = field(default_factory=dict)
    fingerprint: str = ""


def parse_checkpoint(text: str, registry: Sequence[str] | None = None) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON (truncated?): {exc}") from None
    for key in ("format", "version", "fingerprint", "config", "registry", "params"):
        if key not in doc:
            raise CheckpointError(f"checkpoint is missing field {key!r}")
    if doc["format"] != CHECKPOINT_FORMAT or doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc['format']!r} version {doc['version']!r}")
    if fingerprint(doc["config"], doc["registry"]) != doc["fingerprint"]:
        raise CheckpointError("checkpoint field 'fingerprint' does not match its config and registry")
    if registry is not None and list(registry) != doc["registry"]:
        raise CheckpointError(
            f"checkpoint field 'registry' has {len(doc['registry'])} features, current data has {len(registry)}"
        )
    params: Params = {}
    for name, entry in doc["params"].items():
        data = np.array(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"checkpoint field 'params.{name}' has {data.size} values for shape {shape}")
        params[name] = ad.parameter(data.reshape(shape))
    return Checkpoint(params, ModelConfig(**doc["config"]["model"]), doc["registry"], doc["config"], doc["fingerprint"])


def load_checkpoint(path, registry: Sequence[str] | None = None) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    return parse_checkpoint(text, registry)
