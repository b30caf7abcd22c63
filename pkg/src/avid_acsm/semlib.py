"""Semantic libraries: C fixed-capacity buckets of key embeddings, one per
pseudo-label, plus the per-sample label/ambiguity bookkeeping.

Labels are 0-based here (bucket ids 0..C-1).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DuplicateEpochUpdate, EmptyBucket, EmptyNegativePool, InsufficientPool,
                     InvalidLabel, LengthMismatch, NonPositiveTemperature)
from .numeric import as_vector, l2_normalize

PLACEHOLDER = -1  # source index of an entry that did not come from a sample
MODES = ("queue", "momentum")


@dataclass
class Negatives:
    emb: np.ndarray     # (n, d)
    bucket: np.ndarray  # (n,)
    source: np.ndarray  # (n,)

    def __len__(self):
        return len(self.bucket)


class SemanticLibrary:
    """Storage is dense: ``emb[b, s]`` is slot ``s`` of bucket ``b``.

    ``counter`` is a global monotone insertion stamp; the oldest entry of a
    bucket is the filled slot with the smallest stamp.
    """

    def __init__(self, n_buckets: int, capacity: int, dim: int, mode: str = "queue",
                 momentum: float = 0.5):
        if n_buckets < 1 or capacity < 1 or dim < 1:
            raise ValueError("n_buckets, capacity and dim must be positive")
        if mode not in MODES:
            raise ValueError(f"library mode must be one of {MODES}, got {mode!r}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"library momentum must lie in [0, 1), got {momentum}")
        self.n_buckets, self.capacity, self.dim = n_buckets, capacity, dim
        self.mode, self.momentum = mode, momentum
        self.emb = np.zeros((n_buckets, capacity, dim))
        self.source = np.full((n_buckets, capacity), PLACEHOLDER, dtype=np.int64)
        self.counter = np.zeros((n_buckets, capacity), dtype=np.int64)
        self.filled = np.zeros((n_buckets, capacity), dtype=bool)
        self.next_counter = 0
        # sample index -> (bucket, slot); only momentum mode looks entries up
        self._slot_of: dict[int, tuple[int, int]] = {}

    @classmethod
    def random_filled(cls, n_buckets, capacity, dim, rng: np.random.Generator,
                      mode="queue", momentum=0.5) -> "SemanticLibrary":
        """Every slot holds a random unit vector (uniform on the sphere)."""
        lib = cls(n_buckets, capacity, dim, mode, momentum)
        lib.emb[:] = l2_normalize(rng.standard_normal((n_buckets, capacity, dim)))
        lib.filled[:] = True
        lib.counter[:] = np.arange(n_buckets * capacity).reshape(n_buckets, capacity)
        lib.next_counter = n_buckets * capacity
        return lib

    # -- views -----------------------------------------------------------
    def sizes(self) -> np.ndarray:
        return self.filled.sum(axis=1)

    def total(self) -> int:
        return int(self.filled.sum())

    def flat_emb(self) -> np.ndarray:
        return self.emb.reshape(-1, self.dim)

    def flat_bucket(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_buckets), self.capacity)

    def bucket_entries(self, b: int) -> list[tuple[np.ndarray, int, int]]:
        """(embedding, source, counter) of bucket ``b``, oldest first."""
        slots = np.flatnonzero(self.filled[b])
        slots = slots[np.argsort(self.counter[b, slots], kind="stable")]
        return [(self.emb[b, s].copy(), int(self.source[b, s]), int(self.counter[b, s]))
                for s in slots]

    def copy(self) -> "SemanticLibrary":
        other = SemanticLibrary(self.n_buckets, self.capacity, self.dim, self.mode, self.momentum)
        other.emb, other.source = self.emb.copy(), self.source.copy()
        other.counter, other.filled = self.counter.copy(), self.filled.copy()
        other.next_counter = self.next_counter
        other._slot_of = dict(self._slot_of)
        return other

    def _check_label(self, y):
        if not (0 <= int(y) < self.n_buckets):
            raise InvalidLabel(f"label {y} outside [0, {self.n_buckets})")

    # -- mutation --------------------------------------------------------
    def _free_slot(self, b: int) -> int:
        empty = np.flatnonzero(~self.filled[b])
        if len(empty):
            return int(empty[0])
        slot = int(np.argmin(self.counter[b]))
        self._slot_of.pop(int(self.source[b, slot]), None)
        return slot

    def _write(self, b, slot, k, src):
        self.emb[b, slot] = k
        self.source[b, slot] = src
        self.counter[b, slot] = self.next_counter
        self.filled[b, slot] = True
        self.next_counter += 1
        if src >= 0 and self.mode == "momentum":
            self._slot_of[src] = (b, slot)

    def update(self, y: int, k, sample_index: int = PLACEHOLDER):
        """Store key ``k`` under label ``y``.

        queue: append, evicting the bucket's oldest entry when full.
        momentum: if ``sample_index`` is already stored, blend into it
        (m*old + (1-m)*k, renormalised) and move it to bucket ``y`` if its
        label changed; otherwise insert as in queue mode.
        """
        self._check_label(y)
        y = int(y)
        k = as_vector(k)
        if k.shape != (self.dim,):
            raise LengthMismatch(f"key length {k.shape} != library dim {self.dim}")
        if self.mode == "momentum" and sample_index >= 0 and sample_index in self._slot_of:
            b, slot = self._slot_of[sample_index]
            blended = l2_normalize(self.momentum * self.emb[b, slot] + (1.0 - self.momentum) * k)
            if b == y:
                self.emb[b, slot] = blended
                return
            self.filled[b, slot] = False
            self.source[b, slot] = PLACEHOLDER
            self.emb[b, slot] = 0.0
            self.counter[b, slot] = 0
            del self._slot_of[sample_index]
            k = blended
        self._write(y, self._free_slot(y), k, int(sample_index))

    def update_batch(self, labels, keys, sample_indices):
        """Same result as calling ``update`` row by row, in order."""
        if self.mode == "momentum":
            for y, k, i in zip(labels, keys, sample_indices):
                self.update(int(y), k, int(i))
            return
        labels = np.asarray(labels, dtype=np.int64)
        keys = np.asarray(keys, dtype=np.float64)
        sample_indices = np.asarray(sample_indices, dtype=np.int64)
        if keys.shape != (len(labels), self.dim) or len(sample_indices) != len(labels):
            raise LengthMismatch("labels, keys and sample indices disagree in length or dim")
        bad = (labels < 0) | (labels >= self.n_buckets)
        if np.any(bad):
            self._check_label(labels[bad][0])
        stamps = self.next_counter + np.arange(len(labels))
        for b in np.unique(labels):
            rows = np.flatnonzero(labels == b)
            # sequential order of slot reuse: empty slots first, then oldest
            # stamp; new writes are always newest so the order just cycles
            empty = np.flatnonzero(~self.filled[b])
            full = np.flatnonzero(self.filled[b])
            cycle = np.concatenate([empty, full[np.argsort(self.counter[b, full])]])
            slots = cycle[np.arange(len(rows)) % self.capacity]
            keep = len(rows) - min(len(rows), self.capacity)
            rows, slots = rows[keep:], slots[keep:]
            self.emb[b, slots] = keys[rows]
            self.source[b, slots] = sample_indices[rows]
            self.counter[b, slots] = stamps[rows]
            self.filled[b, slots] = True
        self.next_counter += len(labels)

    # -- text snapshot ---------------------------------------------------
    def dumps(self) -> str:
        lines = [f"# semlib n_buckets={self.n_buckets} capacity={self.capacity} dim={self.dim} "
                 f"mode={self.mode} momentum={self.momentum!r} next_counter={self.next_counter}"]
        for b in range(self.n_buckets):
            for s in range(self.capacity):
                if self.filled[b, s]:
                    coords = ",".join(repr(float(x)) for x in self.emb[b, s])
                    lines.append(f"{b}\t{s}\t{self.source[b, s]}\t{self.counter[b, s]}\t{coords}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SemanticLibrary":
        header, *rows = [ln for ln in text.splitlines() if ln.strip()]
        fields = dict(kv.split("=", 1) for kv in header.lstrip("# ").split()[1:])
        lib = cls(int(fields["n_buckets"]), int(fields["capacity"]), int(fields["dim"]),
                  fields["mode"], float(fields["momentum"]))
        lib.next_counter = int(fields["next_counter"])
        for row in rows:
            b, s, src, cnt, coords = row.split("\t")
            b, s, src = int(b), int(s), int(src)
            lib.emb[b, s] = [float(x) for x in coords.split(",")]
            lib.source[b, s], lib.counter[b, s], lib.filled[b, s] = src, int(cnt), True
            if src >= 0 and lib.mode == "momentum":
                lib._slot_of[src] = (b, s)
        return lib

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "SemanticLibrary":
        return cls.loads(Path(path).read_text())


def update_library(lib: SemanticLibrary, y: int, k, sample_index: int = PLACEHOLDER) -> None:
    lib.update(y, k, sample_index)


def assign_soft(lib: SemanticLibrary, q, tau: float, strict: bool = True) -> np.ndarray:
    """Soft membership of ``q`` (vector or rows) over the buckets.

    g_j = sum_{m in bucket j} exp(cos(q, m)/tau) / sum over every stored m.
    With ``strict=False`` an empty bucket simply gets probability 0.
    """
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    if strict and np.any(lib.sizes() == 0):
        raise EmptyBucket(f"buckets {np.flatnonzero(lib.sizes() == 0).tolist()} are empty")
    q = as_vector(q)
    single = q.ndim == 1
    Q = l2_normalize(q[None, :] if single else q)
    scores = np.where(lib.filled.ravel()[None, :], Q @ lib.flat_emb().T / tau, -np.inf)
    scores -= scores.max(axis=1, keepdims=True)
    per_bucket = np.exp(scores).reshape(len(Q), lib.n_buckets, lib.capacity).sum(axis=2)
    g = per_bucket / per_bucket.sum(axis=1, keepdims=True)
    return g[0] if single else g


def _negatives(lib: SemanticLibrary, flat_idx: np.ndarray) -> Negatives:
    return Negatives(lib.flat_emb()[flat_idx].copy(), lib.flat_bucket()[flat_idx],
                     lib.source.ravel()[flat_idx].copy())


def acsm_mask(lib: SemanticLibrary, labels) -> np.ndarray:
    """(B, C*capacity) mask: every stored entry outside the anchor's own bucket."""
    labels = np.asarray(labels)
    return (lib.flat_bucket()[None, :] != labels[:, None]) & lib.filled.ravel()[None, :]


def mine_contrastive_set(lib: SemanticLibrary, y: int) -> Negatives:
    """All stored embeddings from every bucket other than ``y``."""
    lib._check_label(y)
    idx = np.flatnonzero(acsm_mask(lib, [y])[0])
    if len(idx) == 0:
        raise EmptyNegativePool(f"no stored entries outside bucket {y}")
    return _negatives(lib, idx)


def random_mask(lib: SemanticLibrary, n_rows: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Per row, K entries drawn uniformly without replacement from the whole library."""
    pool = np.flatnonzero(lib.filled.ravel())
    if len(pool) < K:
        raise InsufficientPool(f"library holds {len(pool)} entries, {K} requested")
    mask = np.zeros((n_rows, lib.filled.size), dtype=bool)
    if K == 0:
        return mask
    keys = rng.random((n_rows, len(pool)))
    chosen = np.argpartition(keys, K - 1, axis=1)[:, :K] if K < len(pool) else \
        np.broadcast_to(np.arange(len(pool)), (n_rows, len(pool)))
    mask[np.arange(n_rows)[:, None], pool[chosen]] = True
    return mask


def random_negatives(lib: SemanticLibrary, K: int, rng: np.random.Generator) -> Negatives:
    """Baseline contrastive set: K entries sampled uniformly, own bucket included."""
    return _negatives(lib, np.flatnonzero(random_mask(lib, 1, K, rng)[0]))


class PseudoState:
    """Per-sample pseudo-label and semantic-ambiguity counter.

    A sample's ambiguity grows by one each epoch its label differs from the
    previous epoch's label. The first assignment never counts as a swap.
    """

    UNSET = -1

    def __init__(self, n_samples: int):
        self.labels = np.full(n_samples, self.UNSET, dtype=np.int64)
        self.ambiguity = np.zeros(n_samples, dtype=np.int64)
        self.last_epoch = np.full(n_samples, np.iinfo(np.int64).min, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def copy(self) -> "PseudoState":
        other = PseudoState(len(self))
        other.labels, other.ambiguity = self.labels.copy(), self.ambiguity.copy()
        other.last_epoch = self.last_epoch.copy()
        return other


def update_ambiguity(state: PseudoState, i: int, y_new: int, epoch: int) -> None:
    if state.last_epoch[i] == epoch:
        raise DuplicateEpochUpdate(f"sample {i} already updated in epoch {epoch}")
    prev = state.labels[i]
    if prev != PseudoState.UNSET and prev != y_new:
        state.ambiguity[i] += 1
    state.labels[i] = y_new
    state.last_epoch[i] = epoch


def update_ambiguity_all(state: PseudoState, y_new, epoch: int) -> int:
    """Vectorised ``update_ambiguity`` over every sample; returns the swap count."""
    y_new = np.asarray(y_new, dtype=np.int64)
    if np.any(state.last_epoch == epoch):
        raise DuplicateEpochUpdate(f"epoch {epoch} already applied")
    swapped = (state.labels != PseudoState.UNSET) & (state.labels != y_new)
    state.ambiguity += swapped
    state.labels = y_new.copy()
    state.last_epoch[:] = epoch
    return int(swapped.sum())


def sample_weight(state: PseudoState, indices, epoch: int, alpha: float = 1.0,
                  enabled: bool = True) -> np.ndarray:
    """Hard-sample weights 1 + alpha*s_i/(epoch+1), rescaled to batch mean 1."""
    indices = np.atleast_1d(np.asarray(indices))
    if not enabled:
        return np.ones(len(indices))
    w = 1.0 + alpha * state.ambiguity[indices] / (epoch + 1.0)
    return w / w.mean()
