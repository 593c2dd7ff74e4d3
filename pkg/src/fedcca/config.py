"""Experiment configuration: JSON files validated by pydantic models.

Every section rejects unknown keys. A minimal file only needs
``algorithm`` and ``data``; everything else falls back to the defaults
below (5 local epochs, batch 32, lr 0.01, 100 rounds, median-heuristic
sigma).

Example::

    {
      "algorithm": "fedcca",
      "data": {"num_clients": 10, "partition": {"scheme": "pathological",
                                                  "classes_per_client": 2}},
      "hyper": {"n_max": 5},
      "rounds": 50,
      "master_seed": 7
    }
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import FedccaHyper
from .data import PartitionPlan, SyntheticSpec
from .errors import ConfigError
from .model import ModelSpec

Algorithm = Literal["fedcca", "fedavg", "fedprox", "local_only"]
Ablation = Literal["full", "no_selection", "no_attention_aggregation", "neither"]

ALGORITHMS = ("fedcca", "fedavg", "fedprox", "local_only")
ABLATIONS = ("full", "no_selection", "no_attention_aggregation", "neither")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    hidden_dims: list[int] = Field(default_factory=list)
    activation: Literal["relu", "tanh"] = "relu"
    # both default to the data section's feature_dim / num_classes
    input_dim: Optional[int] = None
    num_classes: Optional[int] = None


class PartitionConfig(_Strict):
    scheme: Literal["dirichlet", "pathological"] = "dirichlet"
    alpha: float = Field(0.5, gt=0)
    classes_per_client: int = Field(2, ge=1)


class DataConfig(_Strict):
    num_classes: int = Field(10, ge=2)
    feature_dim: int = Field(10, ge=2)
    samples_per_class: int = Field(100, ge=1)
    cluster_separation: float = Field(1.0, gt=0)
    noise_std: float = Field(1.0, ge=0)
    num_clients: int = Field(10, ge=1)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    domain_angles: list[float] = Field(default_factory=lambda: [0.0], min_length=1)
    client_domain_map: Optional[list[int]] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self) -> "DataConfig":
        if self.feature_dim % 2:
            raise ValueError(f"data.feature_dim must be even, got {self.feature_dim}")
        if self.client_domain_map is not None:
            if len(self.client_domain_map) != self.num_clients:
                raise ValueError("data.client_domain_map must have one entry per client")
            if any(d < 0 or d >= len(self.domain_angles) for d in self.client_domain_map):
                raise ValueError("data.client_domain_map references a domain without an angle")
        if self.partition.classes_per_client > self.num_classes:
            raise ValueError("data.partition.classes_per_client exceeds data.num_classes")
        return self


class HyperConfig(_Strict):
    sigma: Optional[float] = Field(None, gt=0)
    n_max: int = Field(5, ge=1)
    local_epochs: int = Field(5, ge=1)
    lr: float = Field(0.01, gt=0)
    batch_size: int = Field(32, ge=1)
    prox_mu: float = Field(0.01, ge=0)


class ExperimentConfig(_Strict):
    algorithm: Algorithm = "fedcca"
    model: ModelConfig = Field(default_factory=ModelConfig)
    cs_model: Optional[ModelConfig] = None
    data: DataConfig = Field(default_factory=DataConfig)
    hyper: HyperConfig = Field(default_factory=HyperConfig)
    rounds: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    eval_every: int = Field(1, ge=1)
    participation_fraction: float = Field(1.0, gt=0, le=1)
    ablation: Ablation = "full"

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.ablation != "full" and self.algorithm != "fedcca":
            raise ValueError(f"ablation {self.ablation!r} only applies to algorithm 'fedcca'")
        for name, m in (("model", self.model), ("cs_model", self.cs_model)):
            if m is None:
                continue
            if m.input_dim is not None and m.input_dim != self.data.feature_dim:
                raise ValueError(f"{name}.input_dim must equal data.feature_dim")
            if m.num_classes is not None and m.num_classes != self.data.num_classes:
                raise ValueError(f"{name}.num_classes must equal data.num_classes")
        return self

    def _spec(self, m: ModelConfig) -> ModelSpec:
        return ModelSpec(
            input_dim=self.data.feature_dim,
            hidden_dims=tuple(m.hidden_dims),
            num_classes=self.data.num_classes,
            activation=m.activation,
        )

    def model_spec(self) -> ModelSpec:
        return self._spec(self.model)

    def cs_model_spec(self) -> ModelSpec:
        return self._spec(self.cs_model or self.model)

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.data
        return SyntheticSpec(d.num_classes, d.feature_dim, d.samples_per_class,
                             d.cluster_separation, d.noise_std)

    def partition_plan(self) -> PartitionPlan:
        d = self.data
        return PartitionPlan(
            scheme=d.partition.scheme,
            num_clients=d.num_clients,
            alpha=d.partition.alpha,
            classes_per_client=d.partition.classes_per_client,
            domain_angles=tuple(d.domain_angles),
            client_domain_map=None if d.client_domain_map is None else tuple(d.client_domain_map),
            test_fraction=d.test_fraction,
        )

    def hyper_params(self) -> FedccaHyper:
        return FedccaHyper(**self.hyper.model_dump())


def config_to_dict(config: ExperimentConfig) -> dict:
    return config.model_dump(mode="json")


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _describe(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(f"invalid config: {_describe(err)}") from None


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: malformed JSON at line {err.lineno}: {err.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(raw)


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``config`` with dotted-path overrides, revalidated.

    ``with_overrides(cfg, **{"data.partition.alpha": 0.2, "rounds": 3})``
    """
    raw = config_to_dict(config)
    for dotted, value in changes.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            if node.get(key) is None:
                node[key] = {}
            node = node[key]
        node[leaf] = value
    return config_from_dict(raw)
