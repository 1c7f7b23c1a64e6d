"""Run configuration: one YAML file, environment overrides and ``--set`` flags.

Every section maps onto the dataclass that owns those settings, so the
defaults live in one place. Unknown keys and badly typed values are rejected
with their full key path, e.g. ``train.lr``.
"""

from __future__ import annotations

import dataclasses
import os
import types
from dataclasses import dataclass, field, fields, is_dataclass
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigError
from .features import FeatureConfig
from .ingest import ImputePolicy
from .labels import RuleConfig
from .models import ModelConfig
from .synth import SynthConfig
from .training import TrainConfig
from .windows import SplitSpec

ENV_OUTPUT_DIR = "PRODNET_OUTPUT_DIR"
ENV_JOBS = "PRODNET_JOBS"

# seeds are set once at the top level and handed to every stage
_NO_SEED = frozenset({"seed"})


@dataclass(frozen=True)
class PathsConfig:
    data: str | None = None  # production table; the synth output is used when unset
    topology: str | None = None  # well,facility,field table
    output_dir: str = "prodnet-out"
    column_map: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalConfig:
    tau: float = 0.5
    node_features: str = "window"  # or "static"
    missing_nodes: str = "error"  # or "zero"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"eval.tau must be in [0, 1], got {self.tau}")
        if self.node_features not in ("window", "static"):
            raise ConfigError(f"eval.node_features must be 'window' or 'static', got {self.node_features!r}")
        if self.missing_nodes not in ("error", "zero"):
            raise ConfigError(f"eval.missing_nodes must be 'error' or 'zero', got {self.missing_nodes!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    r: int = 14
    paths: PathsConfig = field(default_factory=PathsConfig)
    impute: ImputePolicy = field(default_factory=ImputePolicy)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    labels: RuleConfig = field(default_factory=RuleConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        # wells need their facility and field even for the baselines: features
        # and labels are per well, but the graph stages and reports key on them
        if self.paths.data is not None and self.paths.topology is None:
            raise ConfigError("paths.topology is required when paths.data is set")
        if self.paths.topology is not None and self.paths.data is None:
            raise ConfigError("paths.topology is set but paths.data is not")

    # the top-level seed drives every random choice
    @property
    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=self.seed)

    @property
    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def split_spec(self, kind: str | None = None) -> SplitSpec:
        return dataclasses.replace(self.split, kind=kind or self.split.kind, seed=self.seed)

    def to_dict(self) -> dict:
        return to_plain(self)


_SECTION_SKIP = {SynthConfig: _NO_SEED, TrainConfig: _NO_SEED, SplitSpec: _NO_SEED}


def to_plain(obj: Any) -> Any:
    """JSON/YAML-friendly view: dataclasses as dicts, tuples as lists, dates as ISO text."""
    if is_dataclass(obj):
        omit = _SECTION_SKIP.get(type(obj), frozenset())
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj) if f.name not in omit}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, date):
        return obj.isoformat()
    return obj


def _convert(value: Any, tp: Any, path: str) -> Any:
    origin, args = get_origin(tp), get_args(tp)
    if origin in (Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], path)
    if is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} values, got {len(value)}")
        return tuple(_convert(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is dict or origin is dict:
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return {str(k): str(v) for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, such as 1e-3, as text
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is date:
        if isinstance(value, date):
            return value
        try:
            return date.fromisoformat(str(value))
        except ValueError:
            raise ConfigError(f"{path}: expected an ISO date, got {value!r}") from None
    raise ConfigError(f"{path}: unsupported setting type {tp!r}")


def build(cls, data: Mapping[str, Any], path: str = "") -> Any:
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    hints = get_type_hints(cls)
    allowed = [f.name for f in fields(cls) if f.name not in _SECTION_SKIP.get(cls, frozenset())]
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else str(key)
        if key not in allowed:
            raise ConfigError(f"unknown config key {key_path!r}")
        kwargs[key] = _convert(value, hints[key], key_path)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _set_path(doc: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = doc
    for i, part in enumerate(parts[:-1]):
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {dotted!r}: {'.'.join(parts[:i + 1])!r} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b=value``; the value is read as YAML so numbers and booleans keep their type."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key!r}: cannot parse value {raw!r}: {exc}") from None
    return key.strip(), value


def load_config(path: str | Path | None = None, overrides: list[str] | tuple[str, ...] = (),
                env: Mapping[str, str] | None = None) -> RunConfig:
    """File values, then environment, then ``--set`` overrides (later wins)."""
    doc: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
        doc = loaded or {}
    env = os.environ if env is None else env
    if env.get(ENV_OUTPUT_DIR):
        _set_path(doc, "paths.output_dir", env[ENV_OUTPUT_DIR])
    if env.get(ENV_JOBS):
        try:
            _set_path(doc, "jobs", int(env[ENV_JOBS]))
        except ValueError:
            raise ConfigError(f"{ENV_JOBS} must be an integer, got {env[ENV_JOBS]!r}") from None
    for item in overrides:
        key, value = parse_override(item)
        _set_path(doc, key, value)
    return build(RunConfig, doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)

