"""Experiment configuration: YAML with nested sections, strictly validated.

Unknown keys are rejected so typos fail fast instead of silently running a
default. Defaults here mirror the shipped example configs; runs are fully
reproducible from (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .backward import GradMode
from .numerics import ActivationKind
from .training import LossKind, TrainConfig


class ConfigError(ValueError):
    pass


def _section(doc: dict, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    sec = doc.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    missing = required - set(sec)
    if missing:
        raise ConfigError(f"missing keys in section {name!r}: {sorted(missing)}")
    return sec


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    # csv
    path: str | None = None
    feature_columns: list[int] | None = None     # None = all columns except the label
    label_column: int = -1
    has_header: bool = False
    value_map: dict[str, float] | None = None
    # synthetic
    samples: int = 200
    classes: int = 2
    features: int = 2
    spread: float = 0.5
    data_seed: int = 0
    normalize: bool = True


@dataclass
class SplitConfig:
    train_fraction: float = 0.8
    stratified: bool = True


@dataclass
class ModelConfig:
    node_counts: list[int] = field(default_factory=lambda: [8])
    hidden_levels: int = 1
    activation: ActivationKind = ActivationKind.TANH
    init_scale: float = 1.0


@dataclass
class SweepConfig:
    l1: list[float] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)


VARIANTS = ("nn", "ynn", "ynn_l1", "ynn_l2")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    split: SplitConfig
    model: ModelConfig
    train: TrainConfig
    seeds: list[int]
    variants: list[str]
    sweep: SweepConfig
    output_dir: str


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    top_allowed = {"dataset", "split", "model", "train", "seeds", "variants",
                   "sweep", "output_dir"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    ds_sec = _section(doc, "dataset", {
        "kind", "path", "feature_columns", "label_column", "has_header",
        "value_map", "samples", "classes", "features", "spread", "data_seed",
        "normalize"})
    dataset = DatasetConfig(**ds_sec)
    if dataset.kind not in ("csv", "synthetic"):
        raise ConfigError(f"dataset.kind must be 'csv' or 'synthetic', got {dataset.kind!r}")
    if dataset.kind == "csv" and not dataset.path:
        raise ConfigError("dataset.kind 'csv' requires dataset.path")
    if dataset.kind == "synthetic" and (dataset.samples < 2 or dataset.classes < 2
                                        or dataset.features < 1):
        raise ConfigError("synthetic dataset needs samples >= 2, classes >= 2, features >= 1")

    split_sec = _section(doc, "split", {"train_fraction", "stratified"})
    split = SplitConfig(**split_sec)
    if not 0 < split.train_fraction < 1:
        raise ConfigError(f"split.train_fraction must lie in (0, 1), got {split.train_fraction}")

    model_sec = dict(_section(doc, "model", {
        "node_counts", "hidden_levels", "activation", "init_scale"}))
    if "activation" in model_sec:
        try:
            model_sec["activation"] = ActivationKind.from_name(model_sec["activation"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    model = ModelConfig(**model_sec)
    if not model.node_counts:
        raise ConfigError("model.node_counts must be nonempty")
    if any(n < 1 for n in model.node_counts):
        raise ConfigError("model.node_counts entries must be >= 1")
    if len(set(model.node_counts)) != len(model.node_counts):
        raise ConfigError("duplicate model.node_counts would overlap output paths")
    if model.hidden_levels < 1:
        raise ConfigError("model.hidden_levels must be >= 1")
    if model.init_scale < 0:
        raise ConfigError("model.init_scale must be >= 0")

    train_sec = dict(_section(doc, "train", {
        "learning_rate", "epochs", "batch_size", "l1", "l2", "grad_mode",
        "solver_tol", "solver_max_iter", "projection_rho_max", "loss",
        "active_edge_threshold"}))
    try:
        if "grad_mode" in train_sec:
            train_sec["grad_mode"] = GradMode.from_name(train_sec["grad_mode"])
        if "loss" in train_sec:
            train_sec["loss_kind"] = LossKind.from_name(train_sec.pop("loss"))
        train = TrainConfig(**train_sec)
        train.validate()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None

    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a nonempty list")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds would overlap output paths")

    variants = doc.get("variants", list(VARIANTS))
    if not isinstance(variants, list) or not variants:
        raise ConfigError("variants must be a nonempty list")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; expected subset of {list(VARIANTS)}")
    if len(set(variants)) != len(variants):
        raise ConfigError("duplicate variants would overlap output paths")

    sweep_sec = _section(doc, "sweep", {"l1", "l2"})
    sweep = SweepConfig(**{k: list(v) for k, v in sweep_sec.items()})
    for name, values in (("l1", sweep.l1), ("l2", sweep.l2)):
        if any(v < 0 for v in values):
            raise ConfigError(f"sweep.{name} values must be >= 0")
        if len(set(values)) != len(values):
            raise ConfigError(f"duplicate sweep.{name} values would overlap output paths")

    output_dir = doc.get("output_dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir must be a nonempty string")

    return ExperimentConfig(dataset=dataset, split=split, model=model, train=train,
                            seeds=list(seeds), variants=list(variants), sweep=sweep,
                            output_dir=output_dir)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    try:
        return parse_config(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
