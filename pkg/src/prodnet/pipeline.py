"""End-to-end dataset preparation and model runs shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial
from typing import Mapping, Sequence

import numpy as np

from .evaluation import EvalReport, evaluate
from .features import FeatureConfig, FeatureMatrix, apply_stats, assemble_feature_matrix, fit_stats
from .graph import NodeFeatureTable, ProductionGraph, build_graph, build_node_feature_table
from .ingest import ImputePolicy, WellSeries, impute_series
from .labels import LabelFrame, RuleConfig, label_well
from .models import ModelConfig, init_params
from .parallel import pmap
from .topology import Topology
from .training import ModelInputs, TrainConfig, predict, train
from .windows import SplitSpec, WindowSample, make_windows, split_samples, validation_split

MODEL_VARIANTS: dict[str, tuple[str, ModelConfig]] = {
    "logistic": ("Logistic (flattened)", ModelConfig(kind="logistic")),
    "lstm": ("LSTM", ModelConfig(kind="lstm")),
    "gat_hier": ("Temporal GAT (hierarchy only)", ModelConfig(kind="gat", peer_edges=False)),
    "gat_peer": ("Temporal GAT (with well-well edges)", ModelConfig(kind="gat", peer_edges=True)),
}


@dataclass
class Dataset:
    topology: Topology
    series: dict[str, WellSeries]
    matrices: dict[str, FeatureMatrix]
    labels: dict[str, LabelFrame]

    @property
    def registry(self) -> tuple[str, ...]:
        return next(iter(self.matrices.values())).names

    @property
    def wells(self) -> list[str]:
        return sorted(self.matrices)


def clean_series(raw: Mapping[str, WellSeries], policy: ImputePolicy = ImputePolicy(), jobs: int = 1) -> dict[str, WellSeries]:
    wells = sorted(raw)
    return dict(zip(wells, pmap(partial(impute_series, policy=policy), [raw[w] for w in wells], jobs)))


def featurize(series: Mapping[str, WellSeries], cfg: FeatureConfig = FeatureConfig(), jobs: int = 1) -> dict[str, FeatureMatrix]:
    """Feature matrices sharing one registry; indicator columns are the union over wells."""
    indicator_vars = sorted({v for s in series.values() for v in s.indicators})
    wells = sorted(series)
    fn = partial(assemble_feature_matrix, cfg=cfg, indicator_vars=indicator_vars)
    return dict(zip(wells, pmap(fn, [series[w] for w in wells], jobs)))


def label_all(matrices: Mapping[str, FeatureMatrix], cfg: RuleConfig = RuleConfig(), jobs: int = 1) -> dict[str, LabelFrame]:
    wells = sorted(matrices)
    return dict(zip(wells, pmap(partial(label_well, cfg=cfg), [matrices[w] for w in wells], jobs)))


def prepare_dataset(raw: Mapping[str, WellSeries], topology: Topology, policy: ImputePolicy = ImputePolicy(),
                    feature_cfg: FeatureConfig = FeatureConfig(), rule_cfg: RuleConfig = RuleConfig(),
                    jobs: int = 1) -> Dataset:
    series = clean_series(raw, policy, jobs)
    matrices = featurize(series, feature_cfg, jobs)
    return Dataset(topology, series, matrices, label_all(matrices, rule_cfg, jobs))


@dataclass
class SplitData:
    """Standardized windows for one split, ready to be turned into model inputs."""

    spec: SplitSpec
    r: int
    train: list[WindowSample]
    test: list[WindowSample]
    report: dict
    matrices: dict[str, FeatureMatrix]
    train_masks: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def train_row_masks(samples: Sequence[WindowSample], matrices: Mapping[str, FeatureMatrix], r: int) -> dict[str, np.ndarray]:
    """Rows that appear inside any training window, per well."""
    masks = {w: np.zeros(len(m), dtype=bool) for w, m in matrices.items()}
    for s in samples:
        masks[s.well_id][s.t - r:s.t] = True
    return masks


def all_windows(ds: Dataset, r: int) -> list[WindowSample]:
    return [s for w in ds.wells for s in make_windows(ds.matrices[w], ds.labels[w], r)]


def standardize_split(ds: Dataset, r: int, spec: SplitSpec, train: Sequence[WindowSample],
                      test: Sequence[WindowSample], report: dict) -> SplitData:
    """Rebuild the chosen windows from matrices scaled with training rows only."""
    masks = train_row_masks(train, ds.matrices, r)
    std = {}
    for w, m in ds.matrices.items():
        # a well with no training rows is scaled with its own full history
        mask = masks[w] if masks[w].any() else np.ones(len(m), dtype=bool)
        std[w] = apply_stats(m, fit_stats(m, mask))
    std_windows = {s.key: s for w in ds.wells for s in make_windows(std[w], ds.labels[w], r)}
    return SplitData(spec, r, [std_windows[s.key] for s in train], [std_windows[s.key] for s in test],
                     report, std, masks)


def prepare_split(ds: Dataset, r: int, spec: SplitSpec) -> SplitData:
    train, test, report = split_samples(all_windows(ds, r), spec)
    return standardize_split(ds, r, spec, train, test, report)


def model_inputs(samples: Sequence[WindowSample], graph: ProductionGraph | None = None,
                 table: NodeFeatureTable | None = None) -> ModelInputs:
    X = np.stack([s.X for s in samples]) if samples else np.zeros((0, 0, 0))
    y = np.array([s.y for s in samples], dtype=np.float64)
    if graph is None or table is None:
        return ModelInputs(X, y)
    node_feats = table.values[table.positions([s.date for s in samples])]
    well_pos = np.array([graph.index_of(s.well_id) for s in samples], dtype=np.int64)
    return ModelInputs(X, y, node_feats, well_pos)


@dataclass
class RunResult:
    name: str
    display_name: str
    model: ModelConfig
    params: dict
    history: list[dict]
    scores: np.ndarray
    labels: np.ndarray
    report: EvalReport
    train_scores: np.ndarray | None = None
    train_labels: np.ndarray | None = None


def graph_for(ds: Dataset, model: ModelConfig) -> ProductionGraph:
    topo = Topology({w: ds.topology.wells[w] for w in ds.wells})
    return build_graph(topo, model.peer_edges, model.directed_hierarchy)


@dataclass
class FitResult:
    model: ModelConfig
    params: dict
    history: list[dict]
    graph: ProductionGraph | None
    table: NodeFeatureTable | None


def fit_model(ds: Dataset, split: SplitData, model: ModelConfig, tcfg: TrainConfig, node_mode: str = "window",
              missing: str = "error") -> FitResult:
    graph = table = None
    if model.uses_graph:
        graph = graph_for(ds, model)
        table = build_node_feature_table(graph, split.matrices, split.r, node_mode, split.train_masks, missing)
    fit, val = validation_split(split.train, split.spec.kind, tcfg.val_frac, tcfg.seed)
    fit_in = model_inputs(fit, graph, table)
    val_in = model_inputs(val, graph, table) if val else None
    params = init_params(model, len(ds.registry), split.r, tcfg.seed)
    params, history = train(model, params, fit_in, val_in, tcfg, graph)
    return FitResult(model, params, history, graph, table)


def score(fitted: FitResult, samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    inputs = model_inputs(samples, fitted.graph, fitted.table)
    return predict(fitted.model, fitted.params, inputs, fitted.graph), inputs.y


def run_model(ds: Dataset, split: SplitData, model: ModelConfig, tcfg: TrainConfig, name: str = "",
              display_name: str = "", node_mode: str = "window", missing: str = "error",
              score_train: bool = False, tau: float = 0.5) -> RunResult:
    fitted = fit_model(ds, split, model, tcfg, node_mode, missing)
    scores, labels = score(fitted, split.test)
    report = evaluate(
        display_name or name or model.kind,
        split.spec.kind,
        scores,
        labels,
        tau,
        anomaly_rate_train=split.report["anomaly_rate_train"],
        anomaly_rate_test=split.report["anomaly_rate_test"],
        seed=tcfg.seed,
    )
    result = RunResult(name, display_name, model, fitted.params, fitted.history, scores, labels, report)
    if score_train:
        result.train_scores, result.train_labels = score(fitted, split.train)
    return result


def variant(name: str, base: ModelConfig | None = None) -> tuple[str, ModelConfig]:
    """Display name and config for one of the four compared models.

    Dimensions and other settings come from ``base``; kind and peer edges
    from the variant.
    """
    display, cfg = MODEL_VARIANTS[name]
    if base is not None:
        cfg = replace(base, kind=cfg.kind, peer_edges=cfg.peer_edges)
    return display, cfg
