"""Synthetic paired two-modality data with hidden class labels.

Each sample draws a latent u = mu_z + sigma * noise; both modalities are fixed
random linear maps of the same u plus independent per-modality noise, so the
pair shares both class and instance information.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCollection, InvalidConfig


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 10
    n_samples: int = 2000
    dim_a: int = 32
    dim_v: int = 32
    latent_dim: int = 16
    separation: float = 4.0     # norm of each (mutually orthogonal) class mean
    noise: float = 1.0          # within-class latent std
    modality_noise: float = 0.5
    seed: int = 0               # fixes means and modality maps

    def validate(self):
        if self.n_classes < 2:
            raise InvalidConfig("n_classes must be >= 2")
        if self.n_samples < self.n_classes:
            raise InvalidConfig("n_samples must be >= n_classes")
        if self.latent_dim < self.n_classes:
            raise InvalidConfig("latent_dim must be >= n_classes (orthogonal class means)")
        if min(self.dim_a, self.dim_v) < 1:
            raise InvalidConfig("modality dims must be positive")
        if self.separation <= 0 or self.noise < 0 or self.modality_noise < 0:
            raise InvalidConfig("separation must be positive and noise levels non-negative")
        return self


@dataclass
class TrainView:
    """What the training loop is allowed to see: inputs, no classes."""

    a: np.ndarray
    v: np.ndarray

    def __len__(self):
        return len(self.a)


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    a: np.ndarray
    v: np.ndarray
    z: np.ndarray
    means: np.ndarray
    latent: np.ndarray

    def __len__(self):
        return len(self.z)

    def training_view(self) -> TrainView:
        return TrainView(self.a, self.v)

    def dumps(self) -> str:
        header = " ".join(f"{f.name}={getattr(self.config, f.name)!r}"
                          for f in dataclasses.fields(self.config))
        lines = [f"# synthdata {header}"]
        for i in range(len(self)):
            cells = [str(i), str(int(self.z[i]))]
            cells += [repr(float(x)) for x in self.a[i]]
            cells += [repr(float(x)) for x in self.v[i]]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())


@dataclass
class LoadedDataset:
    """A dataset read back from disk (latents and means are not stored)."""

    config: SyntheticConfig
    a: np.ndarray
    v: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.z)

    def training_view(self) -> TrainView:
        return TrainView(self.a, self.v)


def loads(text: str) -> LoadedDataset:
    header, *rows = [ln for ln in text.splitlines() if ln.strip()]
    if not header.startswith("# synthdata"):
        raise InvalidConfig("not a synthdata file")
    types = {f.name: f.type for f in dataclasses.fields(SyntheticConfig)}
    kv = dict(item.split("=", 1) for item in header.split()[2:])
    cfg = SyntheticConfig(**{k: (float if types[k] == "float" else int)(v) for k, v in kv.items()})
    data = np.array([[float(c) for c in r.split("\t")] for r in rows], dtype=np.float64)
    if len(data) != cfg.n_samples or data.shape[1] != 2 + cfg.dim_a + cfg.dim_v:
        raise InvalidConfig("record count or width disagrees with header")
    z = data[:, 1].astype(np.int64)
    a = data[:, 2:2 + cfg.dim_a]
    v = data[:, 2 + cfg.dim_a:]
    return LoadedDataset(cfg, np.ascontiguousarray(a), np.ascontiguousarray(v), z)


def load(path) -> LoadedDataset:
    return loads(Path(path).read_text())


def generate(cfg: SyntheticConfig, seed: int) -> SyntheticDataset:
    """Sample a dataset. ``cfg.seed`` fixes geometry, ``seed`` fixes the draws.

    Sample i uses its own substream (spawn key i), so any sample can be
    regenerated independently of the others.
    """
    cfg.validate()
    geo = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    basis, _ = np.linalg.qr(geo.standard_normal((cfg.latent_dim, cfg.latent_dim)))
    means = basis[:, :cfg.n_classes].T * cfg.separation
    p_a = geo.standard_normal((cfg.dim_a, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    p_v = geo.standard_normal((cfg.dim_v, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)

    root = np.random.SeedSequence(seed)
    z = np.random.default_rng(root.spawn(1)[0]).permutation(
        np.arange(cfg.n_samples) % cfg.n_classes)
    latent = np.empty((cfg.n_samples, cfg.latent_dim))
    eps_a = np.empty((cfg.n_samples, cfg.dim_a))
    eps_v = np.empty((cfg.n_samples, cfg.dim_v))
    for i in range(cfg.n_samples):
        r = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i)))
        latent[i] = means[z[i]] + cfg.noise * r.standard_normal(cfg.latent_dim)
        eps_a[i] = cfg.modality_noise * r.standard_normal(cfg.dim_a)
        eps_v[i] = cfg.modality_noise * r.standard_normal(cfg.dim_v)
    a = latent @ p_a.T + eps_a
    v = latent @ p_v.T + eps_v
    return SyntheticDataset(cfg, a, v, z.astype(np.int64), means, latent)


def faulty_negative_rate(neg_classes, z_anchor: int) -> float:
    """Fraction of negatives whose true class equals the anchor's."""
    neg_classes = np.asarray(neg_classes)
    if neg_classes.size == 0:
        raise EmptyCollection("no negatives to score")
    return float(np.mean(neg_classes == z_anchor))
