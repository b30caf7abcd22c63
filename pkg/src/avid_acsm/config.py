"""Run configuration: one flat dataclass, a key=value file format, and named
random substreams derived from the root seed."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .synthdata import SyntheticConfig

MINING_MODES = ("acsm", "random")
HARD_MINING_MODES = ("off", "ambiguity")
LIBRARY_MODES = ("queue", "momentum")

# command-line / file spellings that differ from field names
ALIASES = {"C": "n_libraries", "K": "set_size", "m": "momentum", "tau": "tau"}


@dataclass(frozen=True)
class TrainConfig:
    # objective
    tau: float = 0.07
    momentum: float = 0.9
    n_libraries: int = 10
    set_size: int = 504
    mining: str = "acsm"
    library_mode: str = "queue"
    library_momentum: float = 0.5
    hard_mining: str = "off"
    warmup_frac: float = 0.5
    alpha: float = 1.0
    classifier_first: bool = False
    init_labels: str = "random"
    label_refresh: str = "balanced"
    # optimisation
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-5
    classifier_lr: float = 1e-2
    # architecture
    hidden: int = 64
    embed_dim: int = 16
    # evaluation cadence
    probe_every: int = 10
    probe_steps: int = 500
    probe_lr: float = 1e-2
    probe_split: float = 0.8
    # data
    n_classes: int = 10
    n_samples: int = 2000
    dim_a: int = 32
    dim_v: int = 32
    latent_dim: int = 16
    separation: float = 4.0
    noise: float = 1.0
    modality_noise: float = 0.5
    data_map_seed: int = 0
    seed: int = 0

    @property
    def capacity(self) -> int:
        return self.set_size // (self.n_libraries - 1) if self.n_libraries > 1 else self.set_size

    @property
    def warmup_epochs(self) -> int:
        return int(round(self.warmup_frac * self.epochs))

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(self.n_classes, self.n_samples, self.dim_a, self.dim_v,
                               self.latent_dim, self.separation, self.noise,
                               self.modality_noise, self.data_map_seed)

    def validate(self) -> "TrainConfig":
        if self.n_libraries < 2:
            raise InvalidConfig("need at least 2 semantic libraries")
        if self.set_size < 1 or self.set_size % (self.n_libraries - 1):
            raise InvalidConfig(f"K={self.set_size} is not divisible by C-1={self.n_libraries - 1}")
        if self.mining not in MINING_MODES:
            raise InvalidConfig(f"mining must be one of {MINING_MODES}, got {self.mining!r}")
        if self.hard_mining not in HARD_MINING_MODES:
            raise InvalidConfig(f"hard_mining must be one of {HARD_MINING_MODES}")
        if self.library_mode not in LIBRARY_MODES:
            raise InvalidConfig(f"library_mode must be one of {LIBRARY_MODES}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise InvalidConfig("warmup_frac must lie in [0, 1]")
        if not self.tau > 0:
            raise InvalidConfig("tau must be positive")
        if not 0.0 <= self.momentum < 1.0 or not 0.0 <= self.library_momentum < 1.0:
            raise InvalidConfig("momentum coefficients must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("epochs must be >= 0 and batch_size >= 1")
        if self.alpha < 0:
            raise InvalidConfig("alpha must be non-negative")
        if not 0.0 < self.probe_split < 1.0:
            raise InvalidConfig("probe_split must lie in (0, 1)")
        self.synthetic().validate()
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: dict[str, str]) -> "TrainConfig":
        return self.replace(**{k: v for k, v in coerce(overrides).items()})

    def to_lines(self) -> list[str]:
        return [f"{f.name}={_fmt(getattr(self, f.name))}" for f in dataclasses.fields(self)]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def canonical_key(key: str) -> str:
    key = key.strip().lstrip("-")
    key = ALIASES.get(key, key).replace("-", "_")
    return ALIASES.get(key, key)


def coerce(raw: dict[str, str]) -> dict:
    """Turn string key/values into typed TrainConfig fields."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for key, value in raw.items():
        name = canonical_key(key)
        if name not in types:
            raise InvalidConfig(f"unknown config key {key!r}")
        value = str(value).strip()
        kind = types[name]
        try:
            if kind == "bool":
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[name] = value.lower() in ("true", "1", "yes")
            elif kind == "int":
                out[name] = int(value)
            elif kind == "float":
                out[name] = float(value)
            else:
                out[name] = value
        except ValueError:
            raise InvalidConfig(f"bad value for {name}: {value!r}") from None
    return out


def parse_kv(text: str) -> dict[str, str]:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def load_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    raw = parse_kv(path.read_text())
    raw.update(overrides or {})
    return TrainConfig(**coerce(raw)).validate()


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose (data, init, sampling, probe, ...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
