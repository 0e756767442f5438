"""Experiment configuration: JSON document + dotted-path overrides.

Top-level JSON keys: model, lora, fed, data, output_dir. The data block
holds {"source": {"synthetic": N} | {"csv": "path"}, "partition": {...},
"eval_frac": f, "seed": s}. Any leaf can be overridden on the command line
with --set, e.g. --set fed.eta=0.1 (values parsed as JSON, falling back to
string).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from . import rng
from .data import PartitionSpec, load_corpus, synth_corpus
from .errors import ConfigError
from .federation import FedConfig
from .lora import LoraConfig
from .model import ModelConfig


@dataclass
class DataConfig:
    source_csv: str | None = None
    synthetic_n: int | None = None
    seed: int = 0
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    eval_frac: float = 0.2

    def validate(self):
        if (self.source_csv is None) == (self.synthetic_n is None):
            raise ConfigError("data.source must name exactly one of 'csv' or 'synthetic'")
        if self.source_csv is not None and not os.path.exists(self.source_csv):
            raise ConfigError(f"data.source.csv path does not exist: {self.source_csv}")
        if not 0 < self.eval_frac < 1:
            raise ConfigError(f"data.eval_frac must be in (0, 1), got {self.eval_frac}")
        self.partition.validate()

    def load_records(self):
        if self.source_csv is not None:
            return load_corpus(self.source_csv)
        return synth_corpus(self.synthetic_n, seed=self.seed)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/out"

    def validate(self):
        self.model.validate()
        self.lora.validate()
        self.fed.validate()
        self.data.validate()


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {prefix!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown config field {prefix}.{key}")
        if key == "targets" and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {prefix!r}: {exc}") from exc


def _build_data(raw: dict, fed: FedConfig) -> DataConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config section 'data' must be an object")
    raw = dict(raw)
    source = raw.pop("source", None)
    kwargs = {}
    if source is not None:
        if not isinstance(source, dict) or len(source) != 1:
            raise ConfigError("data.source must be {'csv': path} or {'synthetic': n}")
        ((kind, value),) = source.items()
        if kind == "csv":
            kwargs["source_csv"] = value
        elif kind == "synthetic":
            kwargs["synthetic_n"] = int(value)
        else:
            raise ConfigError(f"unknown data.source kind {kind!r}")
    part_raw = raw.pop("partition", {}) or {}
    part_raw = dict(part_raw)
    part_raw.setdefault("n_clients", fed.n_clients)
    kwargs["partition"] = _build(PartitionSpec, part_raw, "data.partition")
    for key in ("seed", "eval_frac"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    if raw:
        raise ConfigError(f"unknown config field data.{next(iter(raw))}")
    return DataConfig(**kwargs)


def parse_experiment(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known = {"model", "lora", "fed", "data", "output_dir"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown top-level config field {key!r}")
    fed = _build(FedConfig, doc.get("fed", {}), "fed")
    exp = ExperimentConfig(
        model=_build(ModelConfig, doc.get("model", {}), "model"),
        lora=_build(LoraConfig, doc.get("lora", {}), "lora"),
        fed=fed,
        data=_build_data(doc.get("data", {}), fed),
        output_dir=doc.get("output_dir", "runs/out"),
    )
    exp.validate()
    return exp


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply dotted-path overrides like fed.eta=0.1 to the raw document."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.field=value")
        path, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        keys = path.split(".")
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object field")
        node[keys[-1]] = value
    return doc


def load_experiment(path, overrides=None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return parse_experiment(apply_overrides(doc, overrides))


def apply_base_seed(exp: ExperimentConfig, base_seed: int) -> ExperimentConfig:
    """Re-seed every sub-config deterministically from one base seed."""
    exp = dataclasses.replace(
        exp,
        model=dataclasses.replace(exp.model, seed=rng.derive(base_seed, "model")),
        lora=dataclasses.replace(exp.lora, seed=rng.derive(base_seed, "lora")),
        fed=dataclasses.replace(exp.fed, seed=rng.derive(base_seed, "fed")),
        data=dataclasses.replace(
            exp.data,
            seed=rng.derive(base_seed, "data"),
            partition=dataclasses.replace(exp.data.partition, seed=rng.derive(base_seed, "partition")),
        ),
    )
    return exp
