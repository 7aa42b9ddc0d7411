"""Experiment configuration: profiles, YAML/JSON files and flag overrides.

Precedence is flags > file > profile defaults. A config file is a mapping
with any of these top-level keys (all optional)::

    profile: desk | full
    name: proposed
    seed: 0
    k: 10
    out: runs/example
    parallel_folds: 1
    dataset:
      path: data.eegf        # EEGF file; omit to use the synthetic generator
      sfreq: 250.0           # sampling rate of the file (EEGF does not store it)
      n_classes: 4
      synthetic: {n_classes, trials_per_class, n_channels, n_samples, sfreq,
                  class_bands, active_channels, amplitude, noise,
                  distractor_bands, distractor_amplitude, seed}
    split: {per_class_test: 10}
    model: {conv_filters, temporal_kernel, pool_kernel, pool_stride,
            discriminator_out, discriminator_hidden, mlp_hidden, elu_alpha,
            elu_between_convs}
    train: {learning_rate, batch_size, max_epochs, patience, weight_decay,
            optimizer, momentum, adversarial_generator_loss, ce_through_generator}
    baseline: {n_pairs, band, bands, k_select, shrinkage, order}

Model input sizes (channels, samples, classes) always follow the dataset.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

TOP_LEVEL = ("profile", "name", "seed", "k", "out", "parallel_folds",
             "dataset", "split", "model", "train", "baseline")


@dataclass
class BaselineConfig:
    n_pairs: int = 3
    band: list[float] | None = field(default_factory=lambda: [4.0, 40.0])
    bands: list[list[float]] | None = None   # None: 4-40 Hz in 4 Hz steps
    k_select: int = 8
    shrinkage: float = 0.1
    order: int = 4


@dataclass
class DatasetConfig:
    path: str | None = None
    sfreq: float | None = 250.0
    n_classes: int | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class ExperimentConfig:
    profile: str = "full"
    name: str = "proposed"
    seed: int = 0
    k: int = 10
    out: str = "runs/default"
    parallel_folds: int = 1
    per_class_test: int = 10
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def load_data(self) -> Dataset:
        ds_cfg = self.dataset
        if ds_cfg.path is not None:
            return load_dataset(ds_cfg.path, ds_cfg.n_classes, ds_cfg.sfreq)
        return generate_synthetic(ds_cfg.synthetic)

    def provenance_hash(self) -> str:
        """Identifies the data and the train/test split, not the method."""
        if self.dataset.path is not None:
            digest = hashlib.sha256(Path(self.dataset.path).read_bytes()).hexdigest()
            src = {"file": digest, "sfreq": self.dataset.sfreq}
        else:
            src = {"synthetic": dataclasses.asdict(self.dataset.synthetic)}
        src.update(per_class_test=self.per_class_test, seed=self.seed)
        return hashlib.sha256(json.dumps(src, sort_keys=True).encode()).hexdigest()[:16]


PROFILES = {
    "full": {},
    "desk": {
        "k": 10,
        "dataset": {"sfreq": 100.0,
                    "synthetic": {"n_channels": 8, "n_samples": 200, "sfreq": 100.0,
                                  "trials_per_class": 40, "amplitude": 5.0, "noise": 1.0}},
        "model": {"discriminator_hidden": [256, 256], "mlp_hidden": [512, 256]},
        "train": {"learning_rate": 1e-3, "max_epochs": 50},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown field")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def resolve_config(file_data: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Combine profile defaults, file contents and flag overrides."""
    file_data = dict(file_data or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = sorted(set(file_data) - set(TOP_LEVEL) - {"per_class_test"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level field")
    profile = overrides.get("profile", file_data.get("profile", "full"))
    if profile not in PROFILES:
        raise ConfigError(f"profile: expected one of {sorted(PROFILES)}, got {profile!r}")
    merged = _merge(_merge(PROFILES[profile], file_data), overrides)
    merged["profile"] = profile
    if "split" in merged:
        split = merged.pop("split")
        if not isinstance(split, dict) or set(split) - {"per_class_test"}:
            raise ConfigError("split: only 'per_class_test' is allowed")
        merged.setdefault("per_class_test", split.get("per_class_test", 10))
    ds = dict(merged.pop("dataset", {}))
    ds["synthetic"] = _build(SyntheticSpec, ds.get("synthetic", {}), "dataset.synthetic")
    sections = {
        "dataset": _build(DatasetConfig, ds, "dataset"),
        "model": _build(ModelConfig, merged.pop("model", {}), "model"),
        "train": _build(TrainConfig, merged.pop("train", {}), "train"),
        "baseline": _build(BaselineConfig, merged.pop("baseline", {}), "baseline"),
    }
    cfg = _build(ExperimentConfig, {**merged, **sections}, "config")
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    if cfg.k < 2:
        raise ConfigError(f"k: need at least 2 folds, got {cfg.k}")
    if cfg.per_class_test < 0:
        raise ConfigError(f"split.per_class_test: must be >= 0, got {cfg.per_class_test}")
    if cfg.parallel_folds < 1:
        raise ConfigError(f"parallel_folds: must be >= 1, got {cfg.parallel_folds}")
    if cfg.dataset.path is not None and not Path(cfg.dataset.path).is_file():
        raise ConfigError(f"dataset.path: {cfg.dataset.path} does not exist")
    if cfg.dataset.path is None:
        cfg.dataset.synthetic.validate()
    cfg.train.validate()


def bind_model_to_data(cfg: ExperimentConfig, ds: Dataset) -> ModelConfig:
    """Model config with input sizes taken from the dataset."""
    mc = dataclasses.replace(cfg.model, n_channels=ds.n_channels, n_samples=ds.n_samples, n_classes=ds.n_classes)
    mc.validate()
    return mc


def schema() -> dict:
    """Field names and defaults of every config section."""
    def fields(cls):
        return {f.name: repr(f.default) if f.default is not dataclasses.MISSING else f"{f.default_factory()!r}"
                for f in dataclasses.fields(cls)}
    return {"top_level": fields(ExperimentConfig), "dataset": fields(DatasetConfig),
            "dataset.synthetic": fields(SyntheticSpec), "model": fields(ModelConfig),
            "train": fields(TrainConfig), "baseline": fields(BaselineConfig)}
