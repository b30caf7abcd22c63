"""Frozen-embedding evaluation: linear probe, clustering purity / NMI,
matched pseudo-label accuracy, and library diagnostics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateSplit, LengthMismatch
from .model import classifier_loss_and_grad, init_classifier
from .numeric import AdamState, adam_step, mlp_forward


@dataclass
class ProbeReport:
    train_acc: float
    test_acc: float
    per_class_acc: list[float]
    n_train: int
    n_test: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def linear_probe(embeddings, labels, split_ratio: float = 0.8, lr: float = 1e-2,
                 steps: int = 500, rng: np.random.Generator | None = None,
                 n_classes: int | None = None) -> ProbeReport:
    """Train an affine softmax classifier on a random train split; score the rest.

    Full-batch Adam from zero initialisation; labels are 0-based ints.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) != len(y):
        raise LengthMismatch(f"{len(X)} embeddings but {len(y)} labels")
    if not 0.0 < split_ratio < 1.0:
        raise DegenerateSplit("split_ratio must lie in (0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    order = rng.permutation(len(X))
    n_train = int(round(split_ratio * len(X)))
    tr, te = order[:n_train], order[n_train:]
    if len(te) == 0 or len(np.unique(y[tr])) < n_classes:
        raise DegenerateSplit("every class must appear in the train split and the test split "
                              "must be non-empty")
    targets = np.eye(n_classes)[y[tr]]
    gamma = init_classifier(X.shape[1], n_classes)
    state = AdamState.for_params(gamma)
    for _ in range(steps):
        _, grads = classifier_loss_and_grad(gamma, X[tr], targets)
        gamma, state = adam_step(gamma, grads, state, lr)
    pred = np.argmax(mlp_forward(gamma, X)[0], axis=1)
    correct = pred == y
    per_class = [float(correct[te][y[te] == c].mean()) if np.any(y[te] == c) else float("nan")
                 for c in range(n_classes)]
    return ProbeReport(float(correct[tr].mean()), float(correct[te].mean()), per_class,
                       len(tr), len(te),
                       {"split_ratio": split_ratio, "lr": lr, "steps": steps})


def contingency(pred, true) -> np.ndarray:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.shape} pseudo-labels vs {true.shape} true labels")
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(true, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def cluster_metrics(pseudo_labels, true_labels) -> tuple[float, float]:
    """(purity, NMI). NMI = I / mean(H_pseudo, H_true), natural logs.

    Two single-cluster labelings count as identical (NMI 1).
    """
    table = contingency(pseudo_labels, true_labels)
    n = table.sum()
    purity = float(table.max(axis=1).sum() / n)
    h_p, h_t = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_p == 0.0 and h_t == 0.0:
        return purity, 1.0
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    nmi = mi / (0.5 * (h_p + h_t))
    return purity, float(np.clip(nmi, 0.0, 1.0))


def matched_accuracy(pseudo_labels, true_labels) -> float:
    """Accuracy under the best one-to-one pseudo-label -> class mapping."""
    table = contingency(pseudo_labels, true_labels)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def _pair_means(emb: np.ndarray, buckets: np.ndarray) -> tuple[float, float]:
    """Mean cosine over same-bucket pairs and over cross-bucket pairs (i != j)."""
    total = emb.sum(axis=0)
    all_pairs = float(total @ total) - float(np.einsum("ij,ij->", emb, emb))
    within_sum, within_n = 0.0, 0
    sizes = []
    for b in np.unique(buckets):
        e = emb[buckets == b]
        s = e.sum(axis=0)
        within_sum += float(s @ s) - float(np.einsum("ij,ij->", e, e))
        within_n += len(e) * (len(e) - 1)
        sizes.append(len(e))
    n = len(emb)
    cross_n = n * n - sum(k * k for k in sizes)
    within = within_sum / within_n if within_n else float("nan")
    cross = (all_pairs - within_sum) / cross_n if cross_n else float("nan")
    return within, cross


def library_compactness(lib) -> dict:
    mask = lib.filled.ravel()
    emb = lib.flat_emb()[mask]
    within, cross = _pair_means(emb, lib.flat_bucket()[mask])
    return {"occupancy": lib.sizes().tolist(), "within_cos": within, "cross_cos": cross,
            "from_samples": int((lib.source.ravel()[mask] >= 0).sum())}


def faulty_rate_rows(neg_mask: np.ndarray, sources: np.ndarray, true_classes: np.ndarray,
                     anchor_idx: np.ndarray) -> np.ndarray:
    """Per-anchor faulty-negative rate; placeholder entries (source < 0) are skipped.

    Rows with no sample-derived negatives give NaN.
    """
    valid = sources >= 0
    src_class = np.where(valid, true_classes[np.where(valid, sources, 0)], -1)
    usable = neg_mask & valid[None, :]
    same = usable & (src_class[None, :] == true_classes[anchor_idx][:, None])
    counts = usable.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, same.sum(axis=1) / counts, np.nan)


def mining_diagnostics(state, true_classes) -> dict:
    """Library occupancy / compactness and the faulty-negative rate of the
    current contrastive sets against ground truth."""
    from .semlib import acsm_mask

    true_classes = np.asarray(true_classes)
    out = {}
    for name, lib in (("audio", state.lib_a), ("visual", state.lib_v)):
        rec = library_compactness(lib)
        labels = state.pseudo.labels
        idx = np.arange(len(labels))
        if state.cfg.mining == "acsm":
            mask = acsm_mask(lib, labels)
        else:
            # expectation of uniform sampling = the whole pool
            mask = np.broadcast_to(lib.filled.ravel(), (len(labels), lib.filled.size))
        rates = faulty_rate_rows(mask, lib.source.ravel(), true_classes, idx)
        rec["faulty_neg_rate"] = float(np.nanmean(rates)) if np.any(~np.isnan(rates)) else None
        out[name] = rec
    out["within_cos"] = float(np.mean([out["audio"]["within_cos"], out["visual"]["within_cos"]]))
    out["cross_cos"] = float(np.mean([out["audio"]["cross_cos"], out["visual"]["cross_cos"]]))
    rates = [out[k]["faulty_neg_rate"] for k in ("audio", "visual")
             if out[k]["faulty_neg_rate"] is not None]
    out["faulty_neg_rate"] = float(np.mean(rates)) if rates else None
    return out
