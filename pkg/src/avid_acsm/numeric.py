"""Dense-vector primitives, a small ReLU MLP with hand-written backprop, Adam,
and a central-difference gradient checker.

Everything is float64 numpy. Functions that accept a "vector" also accept a
2-D array whose rows are independent samples, which is what the trainer uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LengthMismatch, NonPositiveTemperature, ShapeMismatch, StaleCache, ZeroNorm

NORM_FLOOR = 1e-12
ACTIVATIONS = ("relu", "identity")


def as_vector(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def cosine(u, v) -> float:
    u, v = as_vector(u), as_vector(v)
    if u.shape != v.shape:
        raise LengthMismatch(f"cosine: lengths {u.shape} and {v.shape} differ")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        raise ZeroNorm("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` (or each row of ``v``) to unit Euclidean norm."""
    v = as_vector(v)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise ZeroNorm("cannot normalize a zero-norm vector")
    out = v / norms
    # second pass pins idempotence: re-normalizing a unit vector is then a no-op
    # up to the last ulp
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def softmax_temp(scores, tau: float) -> np.ndarray:
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    s = as_vector(scores) / tau
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(x, axis=-1) -> np.ndarray:
    x = as_vector(x)
    mx = x.max(axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.exp(x - mx).sum(axis=axis))


@dataclass
class MlpParams:
    """Stack of affine layers. ``weights[l]`` has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeMismatch("weights, biases and activations must have equal length")
        for l, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {l}: weight {w.shape} / bias {b.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeMismatch(f"layer {l} input {w.shape[1]} != previous output "
                                    f"{self.weights[l - 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(list(arrays[:n]), list(arrays[n:]), list(self.activations))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def same_shape(self, other: "MlpParams") -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]


def init_mlp(dims: Sequence[int], rng: np.random.Generator, hidden_act: str = "relu") -> MlpParams:
    """He-initialised MLP; hidden layers use ``hidden_act``, the last layer is identity."""
    weights, biases, acts = [], [], []
    for l, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        weights.append(rng.standard_normal((dout, din)) * np.sqrt(2.0 / din))
        biases.append(np.zeros(dout))
        acts.append("identity" if l == len(dims) - 2 else hidden_act)
    return MlpParams(weights, biases, acts)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    shapes: list[tuple] = field(default_factory=list)


def mlp_forward(p: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    x = as_vector(x)
    if x.shape[-1] != p.in_dim:
        raise LengthMismatch(f"input length {x.shape[-1]} != network input dim {p.in_dim}")
    cache = MlpCache([], [], [a.shape for a in p.arrays()])
    h = x
    for w, b, act in zip(p.weights, p.biases, p.activations):
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.preacts.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return h, cache


def mlp_backward(p: MlpParams, cache: MlpCache, dy) -> tuple[np.ndarray, MlpParams]:
    """Gradients of ``sum(dy * y)`` w.r.t. the input and every parameter.

    For batched input the parameter gradients are summed over rows.
    """
    if cache.shapes != [a.shape for a in p.arrays()] or len(cache.inputs) != len(p.weights):
        raise StaleCache("cache does not belong to these parameters")
    g = as_vector(dy)
    if g.shape != cache.preacts[-1].shape:
        raise StaleCache(f"upstream gradient {g.shape} != output {cache.preacts[-1].shape}")
    dws, dbs = [None] * len(p.weights), [None] * len(p.weights)
    for l in range(len(p.weights) - 1, -1, -1):
        if p.activations[l] == "relu":
            g = g * (cache.preacts[l] > 0)
        h = cache.inputs[l]
        if g.ndim == 1:
            dws[l] = np.outer(g, h)
            dbs[l] = g.copy()
        else:
            dws[l] = g.T @ h
            dbs[l] = g.sum(axis=0)
        g = g @ p.weights[l]
    return g, MlpParams(dws, dbs, list(p.activations))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, p: MlpParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in p.arrays()], [np.zeros_like(a) for a in p.arrays()])


def adam_step(p: MlpParams, grads: MlpParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> tuple[MlpParams, AdamState]:
    """One Adam update with decoupled (AdamW-style) weight decay. Inputs are not mutated."""
    params, gs = p.arrays(), grads.arrays()
    shapes = [a.shape for a in params]
    if [g.shape for g in gs] != shapes or [a.shape for a in state.m] != shapes:
        raise ShapeMismatch("parameter, gradient and optimizer-state shapes differ")
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    for a, g, m, v in zip(params, gs, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        a = a - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * a)
        new_p.append(a)
        new_m.append(m)
        new_v.append(v)
    return p.with_arrays(new_p), AdamState(new_m, new_v, t)


def numeric_gradient(f: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray],
                     eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. every coordinate of ``arrays``."""
    base = [a.astype(np.float64).copy() for a in arrays]
    out = []
    for k, a in enumerate(base):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            fp = f(base)
            a[idx] = old - eps
            fm = f(base)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """max |a - n| scaled by the largest gradient magnitude seen on either side."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), NORM_FLOOR)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def finite_diff_check(f: Callable[[MlpParams], tuple[float, MlpParams]], p: MlpParams,
                      eps: float = 1e-5) -> float:
    """Compare the analytic gradient returned by ``f`` with central differences.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` mirrors ``params``.
    """
    _, grads = f(p)
    numeric = numeric_gradient(lambda arrs: f(p.with_arrays(arrs))[0], p.arrays(), eps)
    return relative_error(grads.arrays(), numeric)
