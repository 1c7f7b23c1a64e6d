"""Temporal graph attention model and its LSTM and logistic baselines.

All forward functions work on batches: ``X`` is ``(B, r, F)``, node
features are ``(B, N, F)`` (one graph snapshot per sample) and ``well_pos``
picks each sample's well node. Probabilities come back as a ``(B,)`` tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TopologyError
from .graph import ProductionGraph

Params = Dict[str, Tensor]

MODEL_KINDS = ("logistic", "lstm", "gat")
ACTIVATIONS = ("tanh", "elu", "identity")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "gat"
    peer_edges: bool = True
    directed_hierarchy: bool = False
    gat_dim: int = 8
    heads: int = 1
    layers: int = 1
    hidden: int = 16
    leaky_slope: float = 0.2
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"model.activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.gat_dim < 0:
            raise ConfigError(f"model.gat_dim must be >= 0, got {self.gat_dim}")
        for name in ("heads", "layers", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigError(f"model.leaky_slope must be in [0, 1), got {self.leaky_slope}")

    @property
    def uses_graph(self) -> bool:
        return self.kind == "gat"

    @property
    def embed_dim(self) -> int:
        return self.gat_dim * self.heads if self.uses_graph else 0


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, n_features: int, r: int, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    p: Params = {}
    if cfg.kind == "logistic":
        p["head.w"] = ad.parameter(_glorot(rng, r * n_features, 1, (r * n_features,)))
        p["head.b"] = ad.parameter(0.0)
        return p
    if cfg.uses_graph:
        d_in = n_features
        for layer in range(cfg.layers):
            for k in range(cfg.heads):
                p[f"gat{layer}.W{k}"] = ad.parameter(_glorot(rng, d_in, cfg.gat_dim, (d_in, cfg.gat_dim)))
                p[f"gat{layer}.a{k}"] = ad.parameter(_glorot(rng, 2 * cfg.gat_dim, 1, (2 * cfg.gat_dim,)))
            d_in = cfg.gat_dim * cfg.heads
    H = cfg.hidden
    d = n_features + cfg.embed_dim
    p["lstm.W_x"] = ad.parameter(_glorot(rng, d, 4 * H, (d, 4 * H)))
    p["lstm.W_h"] = ad.parameter(_glorot(rng, H, 4 * H, (H, 4 * H)))
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0  # forget gate starts open
    p["lstm.b"] = ad.parameter(b)
    p["head.w"] = ad.parameter(_glorot(rng, H, 1, (H,)))
    p["head.b"] = ad.parameter(0.0)
    return p


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "tanh":
        return ad.tanh(x)
    if name == "elu":
        return ad.elu(x)
    return x


def incidence(graph: ProductionGraph) -> np.ndarray:
    """``(N, E)`` 0/1 matrix routing each edge's message to its destination."""
    M = np.zeros((graph.n_nodes, len(graph.edges)))
    M[graph.dst, np.arange(len(graph.edges))] = 1.0
    return M


def gat_head(h: Tensor, W: Tensor, a: Tensor, src: np.ndarray, dst: np.ndarray, M: np.ndarray,
             slope: float = 0.2, activation: str = "tanh") -> tuple[Tensor, Tensor]:
    """One attention head over node states ``h`` of shape ``(..., N, D_in)``.

    Returns the updated states ``(..., N, D_g)`` and the edge weights
    ``(..., E)``.
    """
    if h.shape[-1] != W.shape[0]:
        raise ShapeError(f"gat: node features have dim {h.shape[-1]} but W expects {W.shape[0]}")
    n = h.shape[-2]
    if np.bincount(dst, minlength=n).min() == 0:
        raise TopologyError("gat: a node has no incoming edges")
    d_g = W.shape[1]
    Wh = ad.matmul(h, W)
    s_dst = ad.matmul(Wh, a[:d_g])
    s_src = ad.matmul(Wh, a[d_g:])
    e = ad.leaky_relu(ad.take(s_dst, dst, axis=-1) + ad.take(s_src, src, axis=-1), slope)
    alpha = ad.segment_softmax(e, dst, n)
    messages = ad.take(Wh, src, axis=-2) * ad.reshape(alpha, alpha.shape + (1,))
    out = ad.matmul(ad.tensor(M), messages)
    return _activate(out, activation), alpha


def gat_layer(graph: ProductionGraph, h: Tensor, params: Params, layer: int, cfg: ModelConfig) -> tuple[Tensor, list[Tensor]]:
    """Multi-head layer; head outputs are concatenated on the feature axis."""
    src, dst, M = graph.src, graph.dst, incidence(graph)
    outs, alphas = [], []
    for k in range(cfg.heads):
        z, alpha = gat_head(h, params[f"gat{layer}.W{k}"], params[f"gat{layer}.a{k}"], src, dst, M,
                            cfg.leaky_slope, cfg.activation)
        outs.append(z)
        alphas.append(alpha)
    return (outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)), alphas


def graph_embedding(graph: ProductionGraph, node_feats, params: Params, cfg: ModelConfig) -> Tensor:
    h = ad.tensor(node_feats)
    for layer in range(cfg.layers):
        h, _ = gat_layer(graph, h, params, layer, cfg)
    return h


def lstm_sequence(inputs, params: Params, hidden: int | None = None) -> Tensor:
    """Run a standard LSTM (gate order i, f, g, o) from zero state; return h_r.

    ``inputs`` is ``(B, r, D)`` or a single ``(r, D)`` sequence.
    """
    x = ad.tensor(inputs)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    W_x, W_h, b = params["lstm.W_x"], params["lstm.W_h"], params["lstm.b"]
    H = W_h.shape[0] if hidden is None else hidden
    if x.ndim != 3 or x.shape[2] != W_x.shape[0]:
        raise ShapeError(f"lstm: input shape {x.shape} does not match W_x {W_x.shape}")
    B, r, _ = x.shape
    xw = ad.matmul(x, W_x) + b
    h = c = None
    for t in range(r):
        g = xw[:, t, :]
        if h is not None:
            g = g + ad.matmul(h, W_h)
        i = ad.sigmoid(g[:, :H])
        f = ad.sigmoid(g[:, H:2 * H])
        cand = ad.tanh(g[:, 2 * H:3 * H])
        o = ad.sigmoid(g[:, 3 * H:])
        c = i * cand if c is None else f * c + i * cand
        h = o * ad.tanh(c)
    if h is None:
        h = ad.tensor(np.zeros((B, H)))
    return h[0] if single else h


def _head(h: Tensor, params: Params) -> Tensor:
    return ad.sigmoid(ad.matmul(h, params["head.w"]) + params["head.b"])


def temporal_gat_forward(X, node_feats, well_pos, graph: ProductionGraph, params: Params, cfg: ModelConfig) -> Tensor:
    X = ad.tensor(X)
    B, r, _ = X.shape
    well_pos = np.asarray(well_pos, dtype=np.int64)
    if well_pos.shape != (B,) or (well_pos < 0).any() or (well_pos >= graph.n_nodes).any():
        raise TopologyError("temporal_gat_forward: sample well not in graph")
    Z = graph_embedding(graph, node_feats, params, cfg)
    z = Z[np.arange(B), well_pos]
    d = z.shape[-1]
    zr = ad.expand(ad.reshape(z, (B, 1, d)), (B, r, d))
    h = lstm_sequence(ad.concat([X, zr], axis=2), params)
    return _head(h, params)


def lstm_baseline_forward(X, params: Params) -> Tensor:
    return _head(lstm_sequence(X, params), params)


def logistic_forward(X, params: Params) -> Tensor:
    X = ad.tensor(X)
    B = X.shape[0]
    flat = ad.reshape(X, (B, -1))
    if flat.shape[1] != params["head.w"].shape[0]:
        raise ShapeError(f"logistic: flattened window has {flat.shape[1]} values, weights expect {params['head.w'].shape[0]}")
    return ad.sigmoid(ad.matmul(flat, params["head.w"]) + params["head.b"])


def forward(cfg: ModelConfig, params: Params, X, node_feats=None, well_pos=None, graph: ProductionGraph | None = None) -> Tensor:
    if cfg.kind == "logistic":
        return logistic_forward(X, params)
    if cfg.kind == "lstm":
        return lstm_baseline_forward(X, params)
    if graph is None or node_feats is None or well_pos is None:
        raise ConfigError("graph model needs a graph, node features and well positions")
    return temporal_gat_forward(X, node_feats, well_pos, graph, params, cfg)
