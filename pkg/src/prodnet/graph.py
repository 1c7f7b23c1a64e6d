"""Production network graph and per-node input features for attention layers."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, TopologyError, ValidationError
from .features import FeatureMatrix
from .topology import Topology

KIND_RANK = {"well": 0, "facility": 1, "field": 2}
EDGE_KINDS = ("hierarchy", "peer", "self")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str


@dataclass(frozen=True)
class ProductionGraph:
    """Directed graph; an edge ``src -> dst`` lets ``dst`` attend to ``src``."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    node_index: Mapping[str, int]
    topology: Topology
    peer_edges: bool = True
    directed_hierarchy: bool = False

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def src(self) -> np.ndarray:
        return np.array([e.src for e in self.edges], dtype=np.int64)

    @property
    def dst(self) -> np.ndarray:
        return np.array([e.dst for e in self.edges], dtype=np.int64)

    @property
    def well_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == "well"]

    def index_of(self, node_id: str) -> int:
        try:
            return self.node_index[node_id]
        except KeyError:
            raise TopologyError(f"node {node_id!r} is not in the production graph") from None

    def edge_counts(self) -> dict[str, int]:
        return {k: sum(e.kind == k for e in self.edges) for k in EDGE_KINDS}

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def to_edge_list(self) -> str:
        lines = ["src\tdst\tkind"]
        lines += [f"{self.nodes[e.src].id}\t{self.nodes[e.dst].id}\t{e.kind}" for e in self.edges]
        return "\n".join(lines) + "\n"


def build_graph(topology: Topology, peer_edges: bool = True, directed_hierarchy: bool = False) -> ProductionGraph:
    """Nodes for every well, facility and field, ordered by (kind, id).

    Hierarchy edges run both ways unless ``directed_hierarchy`` is set, in
    which case only child -> parent edges exist (wells then hear from
    themselves and their peers only). Peer edges join every ordered pair of
    wells on one facility. Every node gets a self edge.
    """
    if not topology.wells:
        raise TopologyError("topology has no wells")
    facilities = topology.facilities
    entries = [("well", w) for w in topology.wells]
    entries += [("facility", f) for f in facilities]
    entries += [("field", f) for f in topology.fields]
    entries.sort(key=lambda e: (KIND_RANK[e[0]], e[1]))
    nodes = tuple(Node(i, k) for k, i in entries)
    index: dict[str, int] = {}
    for pos, n in enumerate(nodes):
        if n.id in index:
            raise TopologyError(f"node id {n.id!r} is used by more than one kind")
        index[n.id] = pos

    edges: list[Edge] = []

    def link(child: str, parent: str):
        c, p = index[child], index[parent]
        edges.append(Edge(c, p, "hierarchy"))
        if not directed_hierarchy:
            edges.append(Edge(p, c, "hierarchy"))

    for well in sorted(topology.wells):
        link(well, topology.wells[well][0])
    for fac in sorted(facilities):
        link(fac, facilities[fac])
    if peer_edges:
        for fac in sorted(facilities):
            members = topology.wells_of(fac)
            for a in members:
                for b in members:
                    if a != b:
                        edges.append(Edge(index[a], index[b], "peer"))
    edges += [Edge(i, i, "self") for i in range(len(nodes))]
    edges.sort(key=lambda e: (e.dst, e.src, EDGE_KINDS.index(e.kind)))
    return ProductionGraph(nodes, tuple(edges), index, topology, peer_edges, directed_hierarchy)


def hierarchy_means(graph: ProductionGraph, well_values: np.ndarray) -> np.ndarray:
    """Lift per-well vectors (axis -2 in ``graph.well_ids`` order) to all nodes.

    Wells copy themselves, facilities average their wells and fields average
    their facilities (a mean of means, not a well-weighted mean).
    """
    well_values = np.asarray(well_values, dtype=np.float64)
    col = {w: j for j, w in enumerate(graph.well_ids)}
    topo = graph.topology
    out = np.empty(well_values.shape[:-2] + (graph.n_nodes, well_values.shape[-1]))
    fac_pos = {}
    for pos, node in enumerate(graph.nodes):
        if node.kind == "well":
            out[..., pos, :] = well_values[..., col[node.id], :]
        elif node.kind == "facility":
            members = [col[w] for w in topo.wells_of(node.id)]
            out[..., pos, :] = well_values[..., members, :].mean(axis=-2)
            fac_pos[node.id] = pos
    for pos, node in enumerate(graph.nodes):
        if node.kind == "field":
            facs = [fac_pos[f] for f in sorted(f for f, fld in topo.facilities.items() if fld == node.id)]
            out[..., pos, :] = out[..., facs, :].mean(axis=-2)
    return out


@dataclass(frozen=True)
class NodeFeatures:
    values: np.ndarray
    mode: str

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValidationError(f"node features must be 2-D, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError("node features contain non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def node_input_features(graph: ProductionGraph, windows: Mapping[str, np.ndarray], mode: str = "window") -> NodeFeatures:
    """Node vectors for one target step from the wells' current windows.

    A well's vector is the column mean of its window; facilities and fields
    average their children.
    """
    missing = [w for w in graph.well_ids if w not in windows]
    if missing:
        raise ValidationError(f"no window in scope for well {missing[0]!r}")
    means = {w: np.asarray(windows[w], dtype=np.float64).mean(axis=0) for w in graph.well_ids}
    dims = {v.shape for v in means.values()}
    if len(dims) != 1:
        raise ValidationError(f"well windows have different feature dimensions {sorted(dims)}")
    return NodeFeatures(hierarchy_means(graph, np.stack([means[w] for w in graph.well_ids])), mode)


@dataclass
class NodeFeatureTable:
    """Node features for every target date, shape ``(n_dates, n_nodes, F)``."""

    dates: list[date]
    values: np.ndarray
    mode: str

    def __post_init__(self):
        self._pos = {d: i for i, d in enumerate(self.dates)}

    def positions(self, dates: Sequence[date]) -> np.ndarray:
        try:
            return np.array([self._pos[d] for d in dates], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"no node features for date {exc.args[0]}") from None

    def at(self, d: date) -> NodeFeatures:
        return NodeFeatures(self.values[self.positions([d])[0]], self.mode)


def build_node_feature_table(
    graph: ProductionGraph,
    matrices: Mapping[str, FeatureMatrix],
    r: int,
    mode: str = "window",
    train_row_masks: Mapping[str, np.ndarray] | None = None,
    missing: str = "error",
) -> NodeFeatureTable:
    """Precompute node features for every date that some well can target.

    ``window`` mode uses each well's window ``t-r .. t-1``; ``static`` mode
    uses each well's mean over its training rows for every date. When a well
    has no window on a date, ``missing='error'`` raises and ``'zero'`` uses a
    zero vector for that well.
    """
    if mode not in ("window", "static"):
        raise ConfigError(f"graph.node_features must be 'window' or 'static', got {mode!r}")
    if missing not in ("error", "zero"):
        raise ConfigError(f"graph.missing_wells must be 'error' or 'zero', got {missing!r}")
    for w in graph.well_ids:
        if w not in matrices:
            raise ValidationError(f"no feature matrix for graph well {w!r}")
    dates = sorted({m.timestamps[t] for w, m in matrices.items() if w in graph.node_index for t in range(r, len(m))})
    F = next(iter(matrices.values())).values.shape[1]
    pos = {d: i for i, d in enumerate(dates)}
    per_well = np.zeros((len(dates), len(graph.well_ids), F))
    have = np.zeros((len(dates), len(graph.well_ids)), dtype=bool)
    for j, w in enumerate(graph.well_ids):
        m = matrices[w]
        if len(m) <= r:
            continue
        if mode == "window":
            means = sliding_window_view(m.values, r, axis=0)[:-1].mean(axis=-1)
        else:
            if train_row_masks is None or w not in train_row_masks:
                raise ValidationError(f"static node features need a training mask for well {w!r}")
            mask = np.asarray(train_row_masks[w], dtype=bool)
            means = np.broadcast_to(m.values[mask].mean(axis=0) if mask.any() else np.zeros(F), (len(m) - r, F))
        idx = [pos[m.timestamps[t]] for t in range(r, len(m))]
        per_well[idx, j] = means
        have[idx, j] = True
    if missing == "error" and not have.all():
        d, j = np.argwhere(~have)[0]
        raise ValidationError(f"no window in scope for well {graph.well_ids[j]!r} on {dates[d].isoformat()}")
    return NodeFeatureTable(dates, hierarchy_means(graph, per_well), mode)
