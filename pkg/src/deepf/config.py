"""Run configuration: typed sections, INI round-trip, ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | adult | communities | tabular | cache
    path: str = ""
    test_path: str = ""
    schema: str = ""
    preset: str = "atis"
    n_samples: int = 20000
    dim: int = 16
    separation: float = 1.0
    cluster_std: float = 1.0
    data_seed: int = 0
    split_seed: int = 0
    train_fraction: float = 0.6
    dev_fraction: float = 0.2
    test_fraction: float = 0.2


@dataclass
class ModelConfig:
    hidden: str = "128,64"
    activation: str = "leaky_relu"
    slope: float = 0.01

    @property
    def hidden_sizes(self) -> list[int]:
        return [int(v) for v in self.hidden.replace(" ", "").split(",") if v]


@dataclass
class LossConfig:
    kind: str = "deepf"  # xent | deepf
    beta: float = 1.0
    count_scope: str = "batch"
    normalization: str = "max"
    temperature: float = 1.0
    epsilon: float = 1e-12


@dataclass
class OptimConfig:
    lr: float = 0.001
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ScheduleConfig:
    epochs: int = 25  # cross-entropy runs
    warmup_epochs: int = 15  # deep-F phase 1 (cross-entropy)
    finetune_epochs: int = 10  # deep-F phase 2
    select: str = "micro_f1"  # micro_f1 | accuracy | avg_fbeta


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    eval_betas: str = "1"

    @property
    def betas(self) -> list[float]:
        return [float(v) for v in self.eval_betas.replace(" ", "").split(",") if v]


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        d, m, l, o, s = self.data, self.model, self.loss, self.optim, self.schedule
        if d.source not in ("synthetic", "adult", "communities", "tabular", "cache"):
            raise ConfigurationError(f"unknown data.source {d.source!r}")
        if d.source in ("tabular", "cache", "communities") and not d.path:
            raise ConfigurationError(f"data.source={d.source} needs data.path")
        if m.activation not in ("relu", "leaky_relu"):
            raise ConfigurationError(f"model.activation must be relu or leaky_relu, got {m.activation!r}")
        if any(h < 1 for h in m.hidden_sizes):
            raise ConfigurationError("hidden layer sizes must be >= 1")
        if l.kind not in ("xent", "deepf"):
            raise ConfigurationError(f"loss.kind must be xent or deepf, got {l.kind!r}")
        if l.beta <= 0:
            raise ConfigurationError("loss.beta must be positive")
        if o.lr <= 0 or o.batch_size < 1:
            raise ConfigurationError("optim.lr must be > 0 and optim.batch_size >= 1")
        if s.epochs < 1 or s.warmup_epochs < 0 or s.finetune_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative (xent epochs >= 1)")
        if l.kind == "deepf" and s.warmup_epochs + s.finetune_epochs < 1:
            raise ConfigurationError("a deep-F run needs at least one epoch")
        if s.select not in ("micro_f1", "accuracy", "avg_fbeta"):
            raise ConfigurationError(f"unknown schedule.select {s.select!r}")
        if not self.run.betas:
            raise ConfigurationError("run.eval_betas must list at least one beta")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, section in self.to_dict().items():
            cp[name] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in section.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    def replace(self, **overrides) -> "RunConfig":
        """Copy with ``"section.key": value`` overrides applied."""
        return from_mapping(self.to_dict(), [f"{k}={v}" for k, v in overrides.items()])


def _coerce(section: str, key: str, ftype, raw):
    try:
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigurationError(f"{section}.{key}: cannot interpret {raw!r} as {ftype}") from None


def from_mapping(mapping: dict, overrides: Iterable[str] = ()) -> RunConfig:
    sections = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}
    values: dict[str, dict] = {name: {} for name in sections}
    for name, items in mapping.items():
        if name not in sections:
            raise ConfigurationError(f"unknown config section [{name}]")
        values[name].update(items)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        key, raw = item.split("=", 1)
        name, sub = key.strip().split(".", 1)
        if name not in sections:
            raise ConfigurationError(f"unknown config section [{name}] in override {item!r}")
        values[name][sub] = raw.strip()
    built = {}
    for name, factory in sections.items():
        cls = type(factory())
        ftypes = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(values[name]) - set(ftypes)
        if unknown:
            raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in [{name}]")
        built[name] = cls(**{k: _coerce(name, k, ftypes[k], v) for k, v in values[name].items()})
    return RunConfig(**built)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    mapping = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            if not cp.read(path):
                raise ConfigurationError(f"cannot read config file {path}")
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        mapping = {s: dict(cp[s]) for s in cp.sections()}
    return from_mapping(mapping, overrides)
