"""``prodnet``: the pipeline from synthetic data or a production table to reports.

Stages run in order and each one reads the artifacts of the stages before it
from the output directory::

    synth -> ingest -> featurize -> label -> split -> train -> evaluate
                                          \\-> ablate -> report

Every stage directory holds a ``manifest.json`` with the sha256 of each input
and output file, the config fingerprint and the seed. Files are written to a
temporary name and renamed, so an interrupted stage never leaves a truncated
artifact behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from functools import partial
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, dump_config, load_config, to_plain
from .errors import MissingArtifactError, ProdnetError, ValidationError
from .evaluation import EvalReport, comparison_table, curve_csv, curve_svg, evaluate, reports_from_json, reports_to_json
from .features import matrix_from_csv, matrix_to_csv
from .graph import build_node_feature_table
from .ingest import read_production_table, build_well_series, series_from_csv, series_to_csv
from .labels import LabelFrame
from .models import ModelConfig
from .parallel import pmap
from .pipeline import (
    MODEL_VARIANTS,
    Dataset,
    FitResult,
    all_windows,
    clean_series,
    featurize,
    fit_model,
    graph_for,
    label_all,
    prepare_split,
    run_model,
    score,
    standardize_split,
    variant,
)
from .synth import export_volve_schema, generate
from .topology import Topology
from .training import TrainingDiverged, atomic_write, checkpoint_text, fingerprint, history_csv, load_checkpoint

SPLIT_KINDS = ("time", "random")
SPLIT_TITLES = {"time": "Time-based split", "random": "Random split"}


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_fingerprint(cfg: RunConfig) -> str:
    """Hash of every setting that can change an artifact (not output dir or job count)."""
    doc = cfg.to_dict()
    doc.pop("jobs")
    doc["paths"].pop("output_dir")
    return sha256_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def stage_command(stage: str, *sub: str) -> str:
    cmd = f"prodnet {stage}"
    if sub:
        cmd += f" --kind {sub[0]}"
    if len(sub) > 1:
        cmd += f" --variant {sub[1]}"
    return cmd


class Workspace:
    """Reads and writes stage artifacts under the output directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.paths.output_dir)

    def rel(self, path: Path) -> str:
        try:
            return path.resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)

    def manifest(self, stage: str, *sub: str) -> dict:
        path = self.root.joinpath(stage, *sub, "manifest.json")
        if not path.exists():
            where = "/".join((stage, *sub))
            raise MissingArtifactError(f"missing {where} artifacts in {self.root}: run `{stage_command(stage, *sub)}` first")
        return json.loads(path.read_text(encoding="utf-8"))

    def read_stage(self, stage: str, *sub: str) -> dict[str, str]:
        """Output files of a finished stage, keyed by name relative to its directory.

        Files are checked against the manifest so a hand-edited or deleted
        artifact is reported instead of silently used.
        """
        manifest = self.manifest(stage, *sub)
        base = self.root.joinpath(stage, *sub)
        out = {}
        for name, digest in manifest["outputs"].items():
            path = base / name
            try:
                text = path.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise MissingArtifactError(f"{self.rel(path)} is missing: rerun `{stage_command(stage, *sub)}`") from None
            if sha256_text(text) != digest:
                raise ValidationError(f"{self.rel(path)} changed since it was written: rerun `{stage_command(stage, *sub)}`")
            out[name] = text
        return out

    def writer(self, stage: str, *sub: str) -> "StageWriter":
        return StageWriter(self, stage, self.root.joinpath(stage, *sub))


class StageWriter:
    def __init__(self, ws: Workspace, stage: str, base: Path):
        self.ws, self.stage, self.base = ws, stage, base
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def input(self, name: str, text: str) -> None:
        self.inputs[name] = sha256_text(text)

    def inputs_from(self, stage_dir: str, files: dict[str, str]) -> None:
        for name, text in files.items():
            self.input(f"{stage_dir}/{name}", text)

    def write(self, name: str, text: str) -> None:
        atomic_write(self.base / name, text)
        self.outputs[name] = sha256_text(text)

    def finish(self, **extra) -> Path:
        doc = {
            "stage": self.stage,
            "version": __version__,
            "seed": self.ws.cfg.seed,
            "config_fingerprint": config_fingerprint(self.ws.cfg),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            **extra,
        }
        path = self.base / "manifest.json"
        atomic_write(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")
        return self.base


# -- loading upstream artifacts --------------------------------------------------------

def _per_well(files: dict[str, str]) -> dict[str, str]:
    return {name[len("wells/"):-len(".csv")]: text for name, text in files.items() if name.startswith("wells/")}


def load_dataset(ws: Workspace, upto: str = "label") -> tuple[Dataset, dict[str, dict[str, str]]]:
    """Dataset rebuilt from the ingest, featurize and (optionally) label artifacts."""
    used: dict[str, dict[str, str]] = {}
    ingest = ws.read_stage("ingest")
    used["ingest"] = ingest
    topo = Topology.from_csv(ingest["topology.csv"])
    series = {w: series_from_csv(t) for w, t in sorted(_per_well(ingest).items())}
    matrices, labels = {}, {}
    if upto in ("featurize", "label"):
        feats = ws.read_stage("featurize")
        used["featurize"] = feats
        matrices = {w: matrix_from_csv(t, w) for w, t in sorted(_per_well(feats).items())}
    if upto == "label":
        labs = ws.read_stage("label")
        used["label"] = labs
        labels = {w: LabelFrame.from_csv(t, w) for w, t in sorted(_per_well(labs).items())}
        if sorted(labels) != sorted(matrices):
            raise ValidationError("label and featurize artifacts cover different wells: rerun `prodnet label`")
    return Dataset(topo, series, matrices, labels), used


def _record(writer: StageWriter, used: dict[str, dict[str, str]]) -> None:
    for stage, files in used.items():
        writer.inputs_from(stage, files)


def model_name(model: ModelConfig) -> str:
    if model.kind == "gat":
        return "gat_peer" if model.peer_edges else "gat_hier"
    return model.kind


def resolve_model(cfg: RunConfig, name: str | None) -> tuple[str, str, ModelConfig]:
    if name is None:
        name = model_name(cfg.model)
        display = MODEL_VARIANTS[name][0] if name in MODEL_VARIANTS else name
        return name, display, cfg.model
    display, model = variant(name, cfg.model)
    return name, display, model


def samples_csv(train, test) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["well_id", "date", "set", "y"])
    for part, samples in (("train", train), ("test", test)):
        for s in samples:
            w.writerow([s.well_id, s.date.isoformat(), part, int(s.y)])
    return buf.getvalue()


def load_split(ws: Workspace, ds: Dataset, kind: str):
    files = ws.read_stage("split", kind)
    report = json.loads(files["report.json"])
    r = ws.cfg.r
    if report.get("r") != r:
        raise ValidationError(f"split/{kind} was made with r={report.get('r')} but the config has r={r}: "
                              f"rerun `prodnet split --kind {kind}`")
    by_key = {(s.well_id, s.date.isoformat()): s for s in all_windows(ds, r)}
    parts = {"train": [], "test": []}
    for row in list(csv.reader(io.StringIO(files["samples.csv"])))[1:]:
        key = (row[0], row[1])
        if key not in by_key:
            raise ValidationError(f"split/{kind} lists window {key} that the current features do not have: "
                                  f"rerun `prodnet split --kind {kind}`")
        parts[row[2]].append(by_key[key])
    spec = ws.cfg.split_spec(kind)
    split_rep = {k: v for k, v in report.items() if k != "r"}
    return standardize_split(ds, r, spec, parts["train"], parts["test"], split_rep), files


# -- stages ------------------------------------------------------------------------------

def stage_synth(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    topo, data, log = generate(cfg.synth_config, cfg.jobs)
    out = ws.writer("synth")
    out.write("production.csv", export_volve_schema(data, cfg.paths.column_map or None))
    out.write("topology.csv", topo.to_csv())
    out.write("events.csv", log.events_csv())
    out.write("truth.csv", log.mask_csv())
    return out.finish(n_wells=len(data), n_days=cfg.synth.T, n_events=len(log.events))


def stage_ingest(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    out = ws.writer("ingest")
    if cfg.paths.data is not None:
        data_path, topo_path = Path(cfg.paths.data), Path(cfg.paths.topology)
        for p in (data_path, topo_path):
            if not p.exists():
                raise MissingArtifactError(f"input file {p} not found")
        table_text = data_path.read_text(encoding="utf-8-sig")
        topo_text = topo_path.read_text(encoding="utf-8-sig")
        out.input(str(data_path), table_text)
        out.input(str(topo_path), topo_text)
    else:
        synth = ws.read_stage("synth")
        table_text, topo_text = synth["production.csv"], synth["topology.csv"]
        out.inputs_from("synth", {k: synth[k] for k in ("production.csv", "topology.csv")})
        data_path = ws.root / "synth" / "production.csv"
    topo = Topology.from_csv(topo_text)
    raw = build_well_series(read_production_table(data_path, cfg.paths.column_map or None), topo)
    series = clean_series(raw, cfg.impute, cfg.jobs)
    out.write("topology.csv", topo.to_csv())
    for w, s in series.items():
        out.write(f"wells/{w}.csv", series_to_csv(s))
    return out.finish(n_wells=len(series))


def stage_featurize(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    ds, used = load_dataset(ws, "ingest")
    matrices = featurize(ds.series, cfg.features, cfg.jobs)
    out = ws.writer("featurize")
    _record(out, used)
    for w, m in matrices.items():
        out.write(f"wells/{w}.csv", matrix_to_csv(m))
    registry = next(iter(matrices.values())).names if matrices else ()
    out.write("registry.txt", "\n".join(registry) + "\n")
    return out.finish(n_features=len(registry))


def stage_label(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    ds, used = load_dataset(ws, "featurize")
    labels = label_all(ds.matrices, cfg.labels, cfg.jobs)
    out = ws.writer("label")
    _record(out, {"featurize": used["featurize"]})
    for w, lab in labels.items():
        out.write(f"wells/{w}.csv", lab.to_csv())
    total = sum(len(l.y) for l in labels.values())
    positives = sum(int(l.y.sum()) for l in labels.values())
    return out.finish(n_rows=total, n_positive=positives)


def stage_split(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    kind = args.kind or cfg.split.kind
    ds, used = load_dataset(ws)
    spec = cfg.split_spec(kind)
    split = prepare_split(ds, cfg.r, spec)
    out = ws.writer("split", kind)
    _record(out, {k: used[k] for k in ("featurize", "label")})
    out.write("samples.csv", samples_csv(split.train, split.test))
    out.write("report.json", json.dumps({**split.report, "r": cfg.r}, sort_keys=True, indent=1) + "\n")
    return out.finish(kind=kind)


def _train_config_doc(cfg: RunConfig, kind: str) -> dict:
    return {
        "r": cfg.r,
        "split": to_plain(cfg.split_spec(kind)),
        "train": to_plain(cfg.train_config),
        "node_features": cfg.eval.node_features,
        "missing_nodes": cfg.eval.missing_nodes,
    }


def stage_train(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    kind = args.kind or cfg.split.kind
    name, _, model = resolve_model(cfg, args.variant)
    ds, used = load_dataset(ws)
    split, split_files = load_split(ws, ds, kind)
    out = ws.writer("train", kind, name)
    _record(out, {k: used[k] for k in ("featurize", "label")})
    out.inputs_from(f"split/{kind}", split_files)
    try:
        fitted = fit_model(ds, split, model, cfg.train_config, cfg.eval.node_features, cfg.eval.missing_nodes)
    except TrainingDiverged as exc:
        out.write("history.csv", history_csv(exc.history))
        out.finish(status="diverged")
        raise
    config_doc = _train_config_doc(cfg, kind)
    out.write("checkpoint.json", checkpoint_text(fitted.params, model, ds.registry, config_doc))
    out.write("history.csv", history_csv(fitted.history))
    return out.finish(status="ok", epochs=len(fitted.history), model=name,
                      checkpoint_fingerprint=fingerprint({"model": to_plain(model), **config_doc}, ds.registry))


def stage_evaluate(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    kind = args.kind or cfg.split.kind
    name, display, _ = resolve_model(cfg, args.variant)
    ds, used = load_dataset(ws)
    split, split_files = load_split(ws, ds, kind)
    train_files = ws.read_stage("train", kind, name)
    ckpt = load_checkpoint(ws.root / "train" / kind / name / "checkpoint.json", ds.registry)
    model = ckpt.model
    graph = table = None
    if model.uses_graph:
        graph = graph_for(ds, model)
        table = build_node_feature_table(graph, split.matrices, split.r, ckpt.config.get("node_features", "window"),
                                         split.train_masks, ckpt.config.get("missing_nodes", "error"))
    fitted = FitResult(model, ckpt.params, [], graph, table)
    scores, labels = score(fitted, split.test)
    report = evaluate(display, kind, scores, labels, cfg.eval.tau,
                      anomaly_rate_train=split.report["anomaly_rate_train"],
                      anomaly_rate_test=split.report["anomaly_rate_test"],
                      seed=cfg.seed, fingerprint=ckpt.fingerprint)
    out = ws.writer("evaluate", kind, name)
    _record(out, {k: used[k] for k in ("featurize", "label")})
    out.inputs_from(f"split/{kind}", split_files)
    out.inputs_from(f"train/{kind}/{name}", train_files)
    out.write("report.json", reports_to_json([report]))
    out.write("scores.csv", _scores_csv(split.test, scores))
    out.write("roc.csv", _roc_csv(report))
    out.write("pr.csv", curve_csv(report.pr_curve, ("threshold", "precision", "recall")))
    out.write("comparison.md", comparison_table([report], SPLIT_TITLES[kind]))
    return out.finish(model=name, kind=kind)


def _scores_csv(samples, scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["well_id", "date", "y", "score"])
    for s, p in zip(samples, scores):
        w.writerow([s.well_id, s.date.isoformat(), int(s.y), repr(float(p))])
    return buf.getvalue()


def _roc_csv(report: EvalReport) -> str:
    rows = [[float("inf") if t is None else t, a, b] for t, a, b in report.roc_curve]
    return curve_csv(rows, ("threshold", "fpr", "tpr"))


def _ablate_one(task, ds: Dataset, splits: dict, cfg: RunConfig) -> EvalReport:
    kind, name = task
    display, model = variant(name, cfg.model)
    res = run_model(ds, splits[kind], model, cfg.train_config, name, display,
                    cfg.eval.node_features, cfg.eval.missing_nodes, tau=cfg.eval.tau)
    return res.report


def summary_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "model", "tau", "roc_auc", "precision_anomaly", "recall_anomaly", "f1_anomaly",
                "TP", "FP", "TN", "FN", "n_samples", "anomaly_rate_train", "anomaly_rate_test"])
    for r in reports:
        c = r.confusion
        w.writerow([r.split_kind, r.model_name, repr(r.tau), repr(r.roc_auc), repr(r.precision_anomaly),
                    repr(r.recall_anomaly), repr(r.f1_anomaly), c["TP"], c["FP"], c["TN"], c["FN"], r.n_samples,
                    repr(r.anomaly_rate_train), repr(r.anomaly_rate_test)])
    return buf.getvalue()


def _bars(reports: Sequence[EvalReport], attr: str, width: int = 40) -> list[str]:
    name_w = max(len(r.model_name) for r in reports)
    lines = []
    for r in reports:
        v = getattr(r, attr)
        lines.append(f"{r.model_name.ljust(name_w)} | {'#' * int(round(v * width)):<{width}} {v:.3f}")
    return lines


def comparison_markdown(reports: Sequence[EvalReport]) -> str:
    parts = []
    for kind in SPLIT_KINDS:
        rows = [r for r in reports if r.split_kind == kind]
        if not rows:
            continue
        tau = rows[0].tau
        parts.append(f"## {SPLIT_TITLES[kind]}\n")
        parts.append("```\n" + comparison_table(rows) + "```\n")
        for attr, label in (("recall_anomaly", "Anomaly recall"), ("precision_anomaly", "Anomaly precision"),
                            ("roc_auc", "ROC-AUC")):
            suffix = "" if attr == "roc_auc" else f" at threshold = {tau:g}"
            parts.append(f"{label} comparison under {SPLIT_TITLES[kind].lower()}{suffix}:\n")
            parts.append("```\n" + "\n".join(_bars(rows, attr)) + "\n```\n")
    return "# Model comparison\n\n" + "\n".join(parts)


def _roc_points(report: EvalReport):
    return [(a, b) for _, a, b in report.roc_curve]


def _pr_points(report: EvalReport):
    return [(b, a) for _, a, b in report.pr_curve]


def stage_ablate(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    ds, used = load_dataset(ws)
    splits = {kind: prepare_split(ds, cfg.r, cfg.split_spec(kind)) for kind in SPLIT_KINDS}
    tasks = [(kind, name) for kind in SPLIT_KINDS for name in MODEL_VARIANTS]
    reports = pmap(partial(_ablate_one, ds=ds, splits=splits, cfg=cfg), tasks, cfg.jobs)
    reports = [_with_fingerprint(r, cfg) for r in reports]
    out = ws.writer("ablate")
    _record(out, {k: used[k] for k in ("featurize", "label")})
    out.write("reports.json", reports_to_json(reports))
    out.write("summary.csv", summary_csv(reports))
    out.write("comparison.md", comparison_markdown(reports))
    for kind in SPLIT_KINDS:
        rows = [r for r in reports if r.split_kind == kind]
        out.write(f"roc_{kind}.svg", curve_svg([(r.model_name, _roc_points(r)) for r in rows],
                                               "False positive rate", "True positive rate"))
        out.write(f"pr_{kind}.svg", curve_svg([(r.model_name, _pr_points(r)) for r in rows], "Recall", "Precision"))
        out.write(f"split_{kind}.json", json.dumps(splits[kind].report, sort_keys=True, indent=1) + "\n")
    return out.finish(models=list(MODEL_VARIANTS), splits=list(SPLIT_KINDS))


def _with_fingerprint(report: EvalReport, cfg: RunConfig) -> EvalReport:
    report.fingerprint = config_fingerprint(cfg)
    return report


def stage_report(cfg: RunConfig, args) -> Path:
    ws = Workspace(cfg)
    out = ws.writer("report")
    reports: list[EvalReport] = []
    sources = []
    ablate_dir = ws.root / "ablate" / "manifest.json"
    if ablate_dir.exists():
        files = ws.read_stage("ablate")
        out.inputs_from("ablate", {"reports.json": files["reports.json"]})
        reports += reports_from_json(files["reports.json"])
        sources.append("ablate")
    for manifest in sorted((ws.root / "evaluate").glob("*/*/manifest.json")):
        kind, name = manifest.parent.parent.name, manifest.parent.name
        files = ws.read_stage("evaluate", kind, name)
        out.inputs_from(f"evaluate/{kind}/{name}", {"report.json": files["report.json"]})
        for r in reports_from_json(files["report.json"]):
            r.model_name = f"{r.model_name} [evaluate]"
            reports.append(r)
        sources.append(f"evaluate/{kind}/{name}")
    if not reports:
        raise MissingArtifactError(f"no evaluation results in {ws.root}: run `prodnet evaluate` or `prodnet ablate` first")
    text = comparison_markdown(reports).replace("# Model comparison", "# Report", 1)
    text += "\nSources: " + ", ".join(sources) + "\n"
    out.write("report.md", text)
    out.write("summary.csv", summary_csv(reports))
    return out.finish(sources=sources)


STAGES = {
    "synth": (stage_synth, "generate a synthetic production network with planted anomalies"),
    "ingest": (stage_ingest, "parse the production table and impute short gaps"),
    "featurize": (stage_featurize, "compute per-well feature matrices"),
    "label": (stage_label, "apply the weak labelling rules"),
    "split": (stage_split, "build windows and split them into train and test sets"),
    "train": (stage_train, "train one model on a split and save a checkpoint"),
    "evaluate": (stage_evaluate, "score a trained checkpoint on the test windows"),
    "ablate": (stage_ablate, "train and evaluate all four models on both split kinds"),
    "report": (stage_report, "collect evaluation results into one report"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems share the config exit code
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting, e.g. --set train.lr=0.003 (repeatable)")
    common.add_argument("--output-dir", metavar="DIR",
                        help="artifact directory (default from config, or $PRODNET_OUTPUT_DIR)")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes for per-well and per-model work "
                                                               "(default from config, or $PRODNET_JOBS)")
    common.add_argument("--seed", type=int, help="seed for data generation, splits and training")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")

    parser = _Parser(prog="prodnet", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"prodnet {__version__}")
    sub = parser.add_subparsers(dest="stage", metavar="STAGE", required=True, parser_class=_Parser)
    for name, (_, help_text) in STAGES.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("split", "train", "evaluate"):
            p.add_argument("--kind", choices=SPLIT_KINDS, help="split kind (default: split.kind from config)")
        if name in ("train", "evaluate"):
            p.add_argument("--variant", choices=list(MODEL_VARIANTS),
                           help="one of the compared models instead of the configured model section")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.output_dir is not None:
        overrides.append(f"paths.output_dir={json.dumps(args.output_dir)}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        fn, _ = STAGES[args.stage]
        where = fn(cfg, args)
    except ProdnetError as exc:
        print(f"prodnet {args.stage}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"prodnet {args.stage}: wrote {where}")
    if args.stage in ("ablate", "report"):
        name = "comparison.md" if args.stage == "ablate" else "report.md"
        sys.stdout.write((where / name).read_text(encoding="utf-8"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
