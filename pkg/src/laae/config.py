"""Experiment configuration stored as a flat ``key=value`` text file."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .nn import MODEL_CONFIGS, CAEConfig, CVAEConfig, ConfigError, VanillaAEConfig
from .optim import make_optimizer

DATA_KINDS = ("synth", "cifar100", "ppm")

# keys that may differ between the two arms of an A/B comparison
OPTIMIZER_KEYS = ("optimizer", "lr", "beta1", "beta2", "eps", "k", "alpha")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "cae"
    data_kind: str = "synth"
    data_path: str = ""
    # synth: number of frames; cifar100 / ppm: 0 means all, else first N
    data_count: int = 256
    data_seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k: int = 5
    alpha: float = 0.5
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    beta: float = 1.0
    eval_every: int = 0
    val_data_path: str = ""
    val_count: int = 0
    out: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODEL_CONFIGS:
            raise ConfigError(f"model must be one of {sorted(MODEL_CONFIGS)}, got {self.model!r}")
        if self.data_kind not in DATA_KINDS:
            raise ConfigError(f"data_kind must be one of {DATA_KINDS}, got {self.data_kind!r}")
        if self.data_kind != "synth" and not self.data_path:
            raise ConfigError(f"data_kind={self.data_kind} needs data_path")
        if self.data_kind == "synth" and self.data_count < 1:
            raise ConfigError("synthetic data needs data_count >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        self.make_optimizer()
        return self

    def make_optimizer(self):
        spec = self.optimizer.strip().lower()
        hyper = {"lr": self.lr}
        if "adam" in spec:
            hyper.update(beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        if spec.startswith("lookahead"):
            hyper.update(k=self.k, alpha=self.alpha)
        return make_optimizer(spec, **hyper)

    def model_config(self) -> CAEConfig | CVAEConfig | VanillaAEConfig:
        return MODEL_CONFIGS[self.model]()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={value if f.type == 'str' else repr(value)}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            typ = known[key].type
            try:
                kwargs[key] = int(value) if typ == "int" else float(value) if typ == "float" else str(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def parse_data_spec(spec: str) -> dict[str, str]:
    """``synth:256[:seed]``, ``cifar100:PATH[:count]`` or ``ppm:DIR[:count]``."""
    kind, _, rest = spec.partition(":")
    if kind not in DATA_KINDS:
        raise ConfigError(f"data spec {spec!r}: kind must be one of {DATA_KINDS}")
    if kind == "synth":
        count, _, seed = rest.partition(":")
        out = {"data_kind": kind, "data_path": ""}
        if count:
            out["data_count"] = count
        if seed:
            out["data_seed"] = seed
        return out
    path, count = rest, ""
    head, sep, tail = rest.rpartition(":")
    if sep and tail.isdigit():
        path, count = head, tail
    if not path:
        raise ConfigError(f"data spec {spec!r} is missing a path")
    out = {"data_kind": kind, "data_path": path, "data_count": count or "0"}
    return out


def differs_outside_optimizer(a: ExperimentConfig, b: ExperimentConfig) -> list[str]:
    return [f.name for f in fields(a)
            if f.name not in OPTIMIZER_KEYS + ("out",) and getattr(a, f.name) != getattr(b, f.name)]
