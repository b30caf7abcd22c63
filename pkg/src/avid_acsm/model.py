"""Query/key encoders per modality, the momentum (EMA) parameter update, and the
linear pseudo-label classifier trained behind a stop-gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidTarget, LengthMismatch, MomentumOutOfRange, ShapeMismatch
from .numeric import (AdamState, MlpCache, MlpParams, adam_step, as_vector, init_mlp,
                      l2_normalize, mlp_backward, mlp_forward, softmax_temp)


@dataclass
class ModalityEncoder:
    """Query parameters (trained by gradients) and key parameters (tracked by EMA)."""

    query: MlpParams
    key: MlpParams

    def __post_init__(self):
        if not self.query.same_shape(self.key):
            raise ShapeMismatch("query and key encoders must share an architecture")

    @property
    def in_dim(self) -> int:
        return self.query.in_dim

    @property
    def out_dim(self) -> int:
        return self.query.out_dim

    @classmethod
    def create(cls, dims, rng: np.random.Generator) -> "ModalityEncoder":
        query = init_mlp(dims, rng)
        return cls(query, query.copy())


def _embed(p: MlpParams, x) -> np.ndarray:
    x = as_vector(x)
    if x.shape[-1] != p.in_dim:
        raise LengthMismatch(f"input length {x.shape[-1]} != encoder input dim {p.in_dim}")
    raw, _ = mlp_forward(p, x)
    return l2_normalize(raw)


def encode_query(enc: ModalityEncoder, x) -> np.ndarray:
    return _embed(enc.query, x)


def encode_key(enc: ModalityEncoder, x) -> np.ndarray:
    return _embed(enc.key, x)


@dataclass
class QueryTrace:
    raw: np.ndarray
    emb: np.ndarray
    cache: MlpCache


def query_forward(enc: ModalityEncoder, x) -> QueryTrace:
    """Forward pass through the query encoder keeping what backward needs."""
    x = as_vector(x)
    if x.shape[-1] != enc.in_dim:
        raise LengthMismatch(f"input length {x.shape[-1]} != encoder input dim {enc.in_dim}")
    raw, cache = mlp_forward(enc.query, x)
    return QueryTrace(raw, l2_normalize(raw), cache)


def normalize_backward(raw: np.ndarray, emb: np.ndarray, d_emb: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``emb = raw/|raw|`` back to ``raw``."""
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    radial = np.sum(d_emb * emb, axis=-1, keepdims=True)
    return (d_emb - radial * emb) / norm


def query_backward(enc: ModalityEncoder, trace: QueryTrace, d_emb: np.ndarray) -> MlpParams:
    d_raw = normalize_backward(trace.raw, trace.emb, d_emb)
    _, grads = mlp_backward(enc.query, trace.cache, d_raw)
    return grads


def momentum_update(key: MlpParams, query: MlpParams, m: float) -> MlpParams:
    """EMA step: key <- m * key + (1 - m) * query, coordinate-wise."""
    if not 0.0 <= m < 1.0:
        raise MomentumOutOfRange(f"momentum must lie in [0, 1), got {m}")
    if not key.same_shape(query):
        raise ShapeMismatch("key and query parameter shapes differ")
    if m == 0.0:
        return query.copy()
    return key.with_arrays([m * k + (1.0 - m) * q for k, q in zip(key.arrays(), query.arrays())])


def init_classifier(embed_dim: int, n_classes: int, rng: np.random.Generator | None = None,
                    scale: float = 0.01) -> MlpParams:
    w = np.zeros((n_classes, embed_dim)) if rng is None else \
        scale * rng.standard_normal((n_classes, embed_dim))
    return MlpParams([w], [np.zeros(n_classes)], ["identity"])


def classify(gamma: MlpParams, q) -> np.ndarray:
    q = as_vector(q)
    if q.shape[-1] != gamma.in_dim:
        raise LengthMismatch(f"embedding length {q.shape[-1]} != classifier input {gamma.in_dim}")
    logits, _ = mlp_forward(gamma, q)
    return softmax_temp(logits, 1.0)


def classifier_loss_and_grad(gamma: MlpParams, q, g) -> tuple[float, MlpParams]:
    """Mean soft-target cross-entropy -sum_j g_j log p_j and its parameter gradient.

    ``q`` is a constant here; no gradient is produced for it.
    """
    q, g = as_vector(q), as_vector(g)
    if np.any(np.abs(g.sum(axis=-1) - 1.0) > 1e-6) or np.any(g < 0):
        raise InvalidTarget("classifier target must be a probability vector")
    logits, cache = mlp_forward(gamma, q)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    n = 1 if q.ndim == 1 else q.shape[0]
    loss = float(-(g * log_p).sum() / n)
    d_logits = (np.exp(log_p) - g) / n
    _, grads = mlp_backward(gamma, cache, d_logits)
    return loss, grads


def classifier_step(gamma: MlpParams, q, g, lr: float, state: AdamState | None = None,
                    weight_decay: float = 0.0) -> tuple[MlpParams, AdamState, float]:
    """One Adam step on the soft-target cross-entropy. Returns (gamma, state, loss)."""
    loss, grads = classifier_loss_and_grad(gamma, q, g)
    state = AdamState.for_params(gamma) if state is None else state
    gamma, state = adam_step(gamma, grads, state, lr, weight_decay=weight_decay)
    return gamma, state, loss


def params_to_dict(p: MlpParams) -> dict:
    return {
        "activations": list(p.activations),
        "weights": [{"shape": list(w.shape), "values": w.ravel().tolist()} for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
    }


def params_from_dict(d: dict) -> MlpParams:
    weights = [np.array(w["values"], dtype=np.float64).reshape(w["shape"]) for w in d["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    return MlpParams(weights, biases, list(d["activations"]))
