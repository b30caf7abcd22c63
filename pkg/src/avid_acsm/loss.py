"""NCE contrastive loss over a contrastive set and the two-direction
audio-visual objective built from it.

Keys and library entries are constants: gradients flow to the query only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonPositiveTemperature, ZeroNorm
from .numeric import NORM_FLOOR, as_vector, logsumexp


@dataclass
class NceResult:
    loss: float
    grad_q: np.ndarray
    positive_prob: float


@dataclass
class AvidResult:
    loss: float
    grad_qv: np.ndarray
    grad_qa: np.ndarray
    loss_v2a: float
    loss_a2v: float


def _check_tau(tau):
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")


def _candidates(k_pos, negs, d) -> np.ndarray:
    negs = as_vector(negs).reshape(-1, d) if len(negs) else np.zeros((0, d))
    return np.vstack([as_vector(k_pos)[None, :], negs])


def _cosines(q, keys):
    qn = np.linalg.norm(q)
    kn = np.linalg.norm(keys, axis=1)
    if qn < NORM_FLOOR or np.any(kn < NORM_FLOOR):
        raise ZeroNorm("zero-norm embedding in NCE")
    return keys @ q / (kn * qn), qn, kn


def nce_loss(q, k_pos, negs, tau: float) -> NceResult:
    """-log softmax probability of the positive among {k_pos} + negs."""
    _check_tau(tau)
    q = as_vector(q)
    if as_vector(k_pos).shape != q.shape:
        raise LengthMismatch("query and positive key lengths differ")
    keys = _candidates(k_pos, negs, q.shape[0])
    cos, _, _ = _cosines(q, keys)
    logits = cos / tau
    loss = float(logsumexp(logits) - logits[0])
    loss = max(loss, 0.0)
    return NceResult(loss, nce_grad_q(q, k_pos, negs, tau), float(np.exp(-loss)))


def nce_grad_q(q, k_pos, negs, tau: float) -> np.ndarray:
    """Analytic d(loss)/dq, including the normalisation inside the cosine."""
    _check_tau(tau)
    q = as_vector(q)
    keys = _candidates(k_pos, negs, q.shape[0])
    cos, qn, kn = _cosines(q, keys)
    logits = cos / tau
    sigma = np.exp(logits - logsumexp(logits))
    coef = sigma.copy()
    coef[0] -= 1.0
    # d cos(q,k)/dq = k/(|q||k|) - cos * q/|q|^2
    dcos = keys / (kn[:, None] * qn) - cos[:, None] * q[None, :] / qn ** 2
    return (coef @ dcos) / tau


def avid_loss(q_v, q_a, k_v, k_a, negs_a, negs_v, tau: float, w: float = 1.0) -> AvidResult:
    """w * [nce(q_v; k_a, negs_a) + nce(q_a; k_v, negs_v)]."""
    v2a = nce_loss(q_v, k_a, negs_a, tau)
    a2v = nce_loss(q_a, k_v, negs_v, tau)
    return AvidResult(w * (v2a.loss + a2v.loss), w * v2a.grad_q, w * a2v.grad_q,
                      v2a.loss, a2v.loss)


def nce_batch(queries: np.ndarray, positives: np.ndarray, bank: np.ndarray,
              neg_mask: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise NCE for unit-norm inputs against a shared bank.

    ``neg_mask[i, j]`` selects bank row j as a negative for query i. Returns
    per-row losses and d(loss_i)/d(query_i) treating the query as a free vector
    on which cosine reduces to a dot product; the caller's normalisation
    backward supplies the tangent projection.
    """
    _check_tau(tau)
    pos = np.einsum("ij,ij->i", queries, positives) / tau
    neg = np.where(neg_mask, queries @ bank.T / tau, -np.inf)
    mx = np.maximum(pos, neg.max(axis=1, initial=-np.inf))
    e_pos = np.exp(pos - mx)
    e_neg = np.exp(neg - mx[:, None])
    denom = e_pos + e_neg.sum(axis=1)
    losses = np.log(denom) - (pos - mx)
    s_pos = e_pos / denom
    s_neg = e_neg / denom[:, None]
    grad = ((s_pos - 1.0)[:, None] * positives + s_neg @ bank) / tau
    return np.maximum(losses, 0.0), grad
