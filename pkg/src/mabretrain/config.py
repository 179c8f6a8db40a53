"""YAML experiment configuration, validated with pydantic.

All schema violations are collected and raised together as a ``ConfigError``
with dotted field paths.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import Dataset, DriftSpec, generate_sea, load_csv, load_idx, write_digits_idx
from .errors import ConfigError
from .harness import ExperimentSpec, MethodSpec
from .regularizers import RegularizerConfig

Replay = Literal["union", "random", "new_data", "reservoir", "mab_sim", "mab_opt"]
WeightOpt = Literal["minib", "epochs", "full_epochs"]
Policy = Literal["ei", "ei2", "ucb", "ts", "exp3"]
Reward = Literal["loss", "ngrad"]
RegKind = Literal["none", "nc", "ewc", "mas"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Strict):
    source: Literal["sea", "idx", "csv", "digits"]
    # sea
    n_per_segment: int | list[int] = Field(12500, ge=1)
    thresholds: list[float] = [8.0, 9.0, 7.0, 9.5]
    noise: float = Field(0.1, ge=0.0, lt=0.5)
    seed: int = 0
    # idx
    images: Optional[str] = None
    labels: Optional[str] = None
    # csv
    path: Optional[str] = None
    label_column: Optional[str] = None
    feature_columns: Optional[list[str]] = None
    # digits
    cache_dir: Optional[str] = None
    normalize: Optional[bool] = None
    ordered: bool = False

    @model_validator(mode="after")
    def _needs(self):
        need = {"idx": ("images", "labels"), "csv": ("path", "label_column")}.get(self.source, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"source {self.source!r} requires {', '.join(missing)}")
        return self


class NetworkConfig(_Strict):
    hidden: list[int] = [64, 64]
    activation: Literal["relu", "tanh", "sigmoid"] = "relu"


class TrainingConfig(_Strict):
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    max_epochs: int = Field(20, ge=1)
    warmup_epochs: int = Field(10, ge=1)
    patience: int = Field(10, ge=1)
    min_delta: float = Field(1e-6, ge=0)
    sessions: int = Field(6, ge=2, le=6)


class RegularizerSection(_Strict):
    kind: RegKind = "nc"
    alpha: float = Field(0.01, ge=0)
    beta: float = Field(0.01, ge=0)


class BanditConfig(_Strict):
    policy: Policy = "ei2"
    ucb_c: float = Field(1.0, gt=0)
    exp3_gamma: float = Field(0.1, gt=0, le=1)
    ei2_beta: float = Field(0.5, gt=0, lt=1)


class MethodConfig(_Strict):
    name: str
    replay: Optional[Replay] = None
    weight_opt: Optional[WeightOpt] = None
    regularizer: Optional[RegularizerSection] = None
    bandit: Optional[BanditConfig] = None
    reward: Optional[Reward] = None


class OutputConfig(_Strict):
    dir: Optional[str] = None
    checkpoints: bool = False


class ExperimentConfig(_Strict):
    dataset: DatasetConfig
    network: NetworkConfig = NetworkConfig()
    training: TrainingConfig = TrainingConfig()
    regularizer: RegularizerSection = RegularizerSection()
    replay: Replay = "mab_sim"
    weight_opt: WeightOpt = "minib"
    bandit: BanditConfig = BanditConfig()
    reward: Reward = "loss"
    sample_ratio: float = Field(0.1, gt=0, le=1)
    clusters: int = Field(3, ge=1)
    tail_fraction: float = Field(0.2, gt=0, le=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    methods: Optional[list[MethodConfig]] = None
    output: OutputConfig = OutputConfig()
    timing: bool = True

    @model_validator(mode="after")
    def _unique_names(self):
        if self.methods:
            names = [m.name for m in self.methods]
            dup = sorted({n for n in names if names.count(n) > 1})
            if dup:
                raise ValueError(f"duplicate method names: {dup}")
        return self

    def method_specs(self) -> list[MethodSpec]:
        entries = self.methods or [MethodConfig(name=self.replay)]
        out = []
        for m in entries:
            reg = m.regularizer or self.regularizer
            band = m.bandit or self.bandit
            out.append(MethodSpec(
                name=m.name,
                replay=m.replay or self.replay,
                weight_opt=m.weight_opt or self.weight_opt,
                regularizer=RegularizerConfig(reg.kind, reg.alpha, reg.beta),
                policy=band.policy, ucb_c=band.ucb_c, exp3_gamma=band.exp3_gamma,
                ei2_beta=band.ei2_beta, reward=m.reward or self.reward))
        return out


def _format_loc(loc) -> str:
    parts = []
    for p in loc:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(("." if parts else "") + str(p))
    return "".join(parts) or "<root>"


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            # pydantic appends the literal/union branch name to the location; drop it
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith(("function-", "int", "list[")))]
            problems.append((_format_loc(loc), err["msg"]))
        raise ConfigError(problems) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError([("<file>", f"YAML parse error: {e}")]) from None
    return parse_config(raw)


def load_dataset(cfg: DatasetConfig, base_dir=".") -> tuple[Dataset, bool]:
    """Returns the dataset and whether features should be z-scored on the base train split."""
    base = Path(base_dir)
    if cfg.source == "sea":
        sizes = cfg.n_per_segment if isinstance(cfg.n_per_segment, int) else tuple(cfg.n_per_segment)
        ds = generate_sea(DriftSpec(sizes, tuple(cfg.thresholds), cfg.noise), cfg.seed)
        default_norm = True
    elif cfg.source == "csv":
        ds = load_csv(base / cfg.path, cfg.label_column, cfg.feature_columns)
        default_norm = True
    elif cfg.source == "idx":
        ds = load_idx(base / cfg.images, base / cfg.labels)
        default_norm = False
    else:
        cache = Path(cfg.cache_dir) if cfg.cache_dir else base / ".digits-idx"
        ds = load_idx(*write_digits_idx(cache), class_count=10)
        default_norm = False
    return ds, default_norm if cfg.normalize is None else cfg.normalize


def build_spec(cfg: ExperimentConfig, base_dir=".", checkpoint_dir=None) -> ExperimentSpec:
    ds, normalize = load_dataset(cfg.dataset, base_dir)
    t = cfg.training
    return ExperimentSpec(
        dataset=ds, methods=cfg.method_specs(), hidden=tuple(cfg.network.hidden),
        activation=cfg.network.activation, batch_size=t.batch_size, lr=t.lr,
        max_epochs=t.max_epochs, warmup=t.warmup_epochs, patience=t.patience,
        min_delta=t.min_delta, ratio=cfg.sample_ratio, clusters=cfg.clusters,
        tail_fraction=cfg.tail_fraction, normalize=normalize, ordered_split=cfg.dataset.ordered,
        n_sessions=t.sessions, timing=cfg.timing, checkpoint_dir=checkpoint_dir)
