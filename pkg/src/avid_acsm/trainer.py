"""Training loop: cross-modal NCE with momentum key encoders, semantic
libraries, pseudo-label classifiers, and ambiguity-weighted samples."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, substream
from .errors import InvalidConfig
from .evaluation import cluster_metrics, faulty_rate_rows, linear_probe, matched_accuracy
from .loss import nce_batch
from .model import (ModalityEncoder, classifier_step, classify, encode_key, encode_query,
                    init_classifier, momentum_update, params_from_dict, params_to_dict,
                    query_backward, query_forward)
from .numeric import AdamState, MlpParams, adam_step, logsumexp
from .semlib import (PseudoState, SemanticLibrary, acsm_mask, assign_soft, random_mask,
                     sample_weight, update_ambiguity_all)
from .synthdata import TrainView, generate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainState:
    cfg: TrainConfig
    enc_v: ModalityEncoder
    enc_a: ModalityEncoder
    cls_v: MlpParams
    cls_a: MlpParams
    lib_v: SemanticLibrary   # holds visual keys; negatives for audio queries
    lib_a: SemanticLibrary   # holds audio keys; negatives for visual queries
    pseudo: PseudoState
    opt_v: AdamState
    opt_a: AdamState
    opt_cls_v: AdamState
    opt_cls_a: AdamState
    rng: np.random.Generator
    epoch: int = 0


@dataclass
class StepResult:
    loss: float
    loss_v2a: float
    loss_a2v: float
    indices: np.ndarray
    weights: np.ndarray
    q_v: np.ndarray
    q_a: np.ndarray
    k_v: np.ndarray
    k_a: np.ndarray
    bank_a: np.ndarray
    bank_v: np.ndarray
    mask_a: np.ndarray
    mask_v: np.ndarray
    sources_a: np.ndarray
    sources_v: np.ndarray
    classifier_loss: float
    fallback_rows: int = 0


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict] = field(default_factory=list)


def init_state(cfg: TrainConfig, n_samples: int) -> TrainState:
    cfg.validate()
    rng = substream(cfg.seed, "init")
    dims_v = [cfg.dim_v, cfg.hidden, cfg.hidden, cfg.embed_dim]
    dims_a = [cfg.dim_a, cfg.hidden, cfg.hidden, cfg.embed_dim]
    enc_v = ModalityEncoder.create(dims_v, rng)
    enc_a = ModalityEncoder.create(dims_a, rng)
    cls_v = init_classifier(cfg.embed_dim, cfg.n_libraries, rng)
    cls_a = init_classifier(cfg.embed_dim, cfg.n_libraries, rng)
    libs = [SemanticLibrary.random_filled(cfg.n_libraries, cfg.capacity, cfg.embed_dim, rng,
                                          cfg.library_mode, cfg.library_momentum)
            for _ in range(2)]
    return TrainState(cfg, enc_v, enc_a, cls_v, cls_a, libs[0], libs[1], PseudoState(n_samples),
                      AdamState.for_params(enc_v.query), AdamState.for_params(enc_a.query),
                      AdamState.for_params(cls_v), AdamState.for_params(cls_a),
                      substream(cfg.seed, "sampling"))


def hard_mining_active(cfg: TrainConfig, epoch: int) -> bool:
    return cfg.hard_mining == "ambiguity" and epoch >= cfg.warmup_epochs


def _negative_mask(state: TrainState, lib: SemanticLibrary, labels: np.ndarray):
    cfg = state.cfg
    if cfg.mining == "random":
        return random_mask(lib, len(labels), min(cfg.set_size, lib.total()), state.rng), 0
    mask = acsm_mask(lib, labels)
    own = lib.flat_bucket()[None, :] == labels[:, None]
    if np.any(mask & own):
        raise AssertionError("contrastive set contains an entry from the anchor's own library")
    empty = ~mask.any(axis=1)
    if np.any(empty):
        # empty negative pool: fall back to uniform sampling for those rows
        k = min(cfg.set_size, lib.total())
        mask[empty] = random_mask(lib, int(empty.sum()), k, state.rng)
    return mask, int(empty.sum())


def train_step(state: TrainState, view: TrainView, idx: np.ndarray) -> StepResult:
    """One iteration on the samples ``idx``; mutates ``state`` in place."""
    cfg = state.cfg
    idx = np.asarray(idx)
    x_v, x_a = view.v[idx], view.a[idx]
    # (1) queries through theta, keys through delta
    tr_v, tr_a = query_forward(state.enc_v, x_v), query_forward(state.enc_a, x_a)
    k_v, k_a = encode_key(state.enc_v, x_v), encode_key(state.enc_a, x_a)
    # (2) contrastive sets under the frozen epoch labels
    labels = state.pseudo.labels[idx]
    mask_a, fb_a = _negative_mask(state, state.lib_a, labels)
    mask_v, fb_v = _negative_mask(state, state.lib_v, labels)
    bank_a, bank_v = state.lib_a.flat_emb().copy(), state.lib_v.flat_emb().copy()
    sources_a, sources_v = state.lib_a.source.ravel().copy(), state.lib_v.source.ravel().copy()
    # (3) weighted two-direction loss, averaged over the batch
    w = sample_weight(state.pseudo, idx, state.epoch, cfg.alpha,
                      enabled=hard_mining_active(cfg, state.epoch))
    l_v2a, g_qv = nce_batch(tr_v.emb, k_a, bank_a, mask_a, cfg.tau)
    l_a2v, g_qa = nce_batch(tr_a.emb, k_v, bank_v, mask_v, cfg.tau)
    n = len(idx)
    loss = float(np.sum(w * (l_v2a + l_a2v)) / n)
    scale = (w / n)[:, None]
    # (4) Adam on the query encoders
    grads_v = query_backward(state.enc_v, tr_v, scale * g_qv)
    grads_a = query_backward(state.enc_a, tr_a, scale * g_qa)
    q_v_params, state.opt_v = adam_step(state.enc_v.query, grads_v, state.opt_v, cfg.lr,
                                        weight_decay=cfg.weight_decay)
    q_a_params, state.opt_a = adam_step(state.enc_a.query, grads_a, state.opt_a, cfg.lr,
                                        weight_decay=cfg.weight_decay)
    # (5) momentum update of the key encoders
    state.enc_v = ModalityEncoder(q_v_params,
                                  momentum_update(state.enc_v.key, q_v_params, cfg.momentum))
    state.enc_a = ModalityEncoder(q_a_params,
                                  momentum_update(state.enc_a.key, q_a_params, cfg.momentum))
    # (6) library update and (7) classifier update; order switchable for ablation
    if cfg.classifier_first:
        cls_loss = _classifier_update(state, tr_v.emb, tr_a.emb)
        _library_update(state, labels, k_v, k_a, idx)
    else:
        _library_update(state, labels, k_v, k_a, idx)
        cls_loss = _classifier_update(state, tr_v.emb, tr_a.emb)
    return StepResult(loss, float(l_v2a.mean()), float(l_a2v.mean()), idx, w,
                      tr_v.emb, tr_a.emb, k_v, k_a, bank_a, bank_v, mask_a, mask_v,
                      sources_a, sources_v, cls_loss, fb_a + fb_v)


def _library_update(state, labels, k_v, k_a, idx):
    state.lib_v.update_batch(labels, k_v, idx)
    state.lib_a.update_batch(labels, k_a, idx)


def _classifier_update(state: TrainState, q_v: np.ndarray, q_a: np.ndarray) -> float:
    cfg = state.cfg
    # a visual query is compared with audio keys and vice versa
    g_v = assign_soft(state.lib_a, q_v, cfg.tau, strict=False)
    g_a = assign_soft(state.lib_v, q_a, cfg.tau, strict=False)
    state.cls_v, state.opt_cls_v, loss_v = classifier_step(state.cls_v, q_v, g_v,
                                                           cfg.classifier_lr, state.opt_cls_v)
    state.cls_a, state.opt_cls_a, loss_a = classifier_step(state.cls_a, q_a, g_a,
                                                           cfg.classifier_lr, state.opt_cls_a)
    return 0.5 * (loss_v + loss_a)


def embed_all(state: TrainState, view: TrainView) -> tuple[np.ndarray, np.ndarray]:
    return encode_query(state.enc_v, view.v), encode_query(state.enc_a, view.a)


def predict_proba(state: TrainState, view: TrainView) -> np.ndarray:
    q_v, q_a = embed_all(state, view)
    return 0.5 * (classify(state.cls_v, q_v) + classify(state.cls_a, q_a))


def balanced_assignment(probs: np.ndarray, iters: int = 100) -> np.ndarray:
    """Sinkhorn-Knopp rescaling of ``probs`` to equal column mass, then argmax.

    This is the maximum-likelihood labelling under an equal-partition
    constraint; it keeps one library from absorbing every sample.
    """
    n, c = probs.shape
    log_q = np.log(np.maximum(probs, 1e-300))
    log_r = np.zeros(n)
    log_c = np.zeros(c)
    for _ in range(iters):
        prev = log_c
        log_c = np.log(n / c) - logsumexp(log_q + log_r[:, None], axis=0)
        log_r = -logsumexp(log_q + log_c[None, :], axis=1)
        if np.max(np.abs(log_c - prev)) < 1e-9:
            break
    return np.argmax(log_q + log_c[None, :], axis=1)


def refresh_pseudo_labels(state: TrainState, view: TrainView, epoch: int | None = None) -> int:
    """Re-label every sample from the modality-averaged classifier output and
    update ambiguity counters; returns how many labels changed.

    ``argmax`` mode breaks ties by lowest index; ``balanced`` mode applies the
    equal-partition rescaling first.
    """
    epoch = state.epoch if epoch is None else epoch
    probs = predict_proba(state, view)
    if state.cfg.label_refresh == "balanced":
        labels = balanced_assignment(probs)
    else:
        labels = np.argmax(probs, axis=1)
    return update_ambiguity_all(state.pseudo, labels, epoch)


def initial_labels(state: TrainState, view: TrainView) -> None:
    """First assignment pass, before any training.

    ``random`` spreads samples uniformly over the libraries; ``classifier``
    uses the freshly initialised classifiers.
    """
    if state.cfg.init_labels == "classifier":
        refresh_pseudo_labels(state, view, epoch=-1)
    else:
        rng = substream(state.cfg.seed, "labels")
        update_ambiguity_all(state.pseudo, rng.integers(state.cfg.n_libraries, size=len(view)), -1)


def epoch_batches(state: TrainState, n: int) -> list[np.ndarray]:
    order = state.rng.permutation(n)
    return [order[s:s + state.cfg.batch_size] for s in range(0, n, state.cfg.batch_size)]


def probe(state: TrainState, view: TrainView, z: np.ndarray) -> dict:
    cfg = state.cfg
    q_v, q_a = embed_all(state, view)
    out = {}
    for name, emb in (("v", q_v), ("a", q_a)):
        rep = linear_probe(emb, z, cfg.probe_split, cfg.probe_lr, cfg.probe_steps,
                           substream(cfg.seed, "probe"), n_classes=cfg.n_classes)
        out[f"probe_acc_{name}"] = rep.test_acc
    out["probe_acc"] = 0.5 * (out["probe_acc_v"] + out["probe_acc_a"])
    return out


def train(cfg: TrainConfig, dataset=None, metrics_path=None, checkpoint_dir=None,
          checkpoint_every: int = 0) -> TrainResult:
    """Run ``cfg.epochs`` epochs; ground-truth classes are used only for metrics."""
    cfg.validate()
    if dataset is None:
        dataset = generate(cfg.synthetic(), seed=int(substream(cfg.seed, "data").integers(2**31)))
    if dataset.a.shape[1] != cfg.dim_a or dataset.v.shape[1] != cfg.dim_v:
        raise InvalidConfig(f"dataset dims (a={dataset.a.shape[1]}, v={dataset.v.shape[1]}) "
                            f"do not match config (a={cfg.dim_a}, v={cfg.dim_v})")
    view, z = dataset.training_view(), np.asarray(dataset.z)
    state = init_state(cfg, len(view))
    result = TrainResult(state)
    if cfg.epochs == 0:
        return result
    initial_labels(state, view)
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            rec = _run_epoch(state, view, z)
            swaps = refresh_pseudo_labels(state, view, epoch)
            purity, nmi = cluster_metrics(state.pseudo.labels, z)
            rec.update(swaps=swaps, purity=purity, nmi=nmi,
                       classifier_agreement=matched_accuracy(state.pseudo.labels, z),
                       hard_mining_active=hard_mining_active(cfg, epoch))
            last = epoch == cfg.epochs - 1
            if last or (cfg.probe_every and (epoch + 1) % cfg.probe_every == 0):
                rec.update(probe(state, view, z))
            else:
                rec.update(probe_acc=None, probe_acc_v=None, probe_acc_a=None)
            result.history.append(rec)
            if sink:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
                sink.flush()
            if checkpoint_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / f"checkpoint_{epoch + 1:04d}.json")
            log.debug("epoch %d loss %.4f agree %.3f", epoch, rec["loss"],
                      rec["classifier_agreement"])
        state.epoch = cfg.epochs
    finally:
        if sink:
            sink.close()
    return result


def _run_epoch(state: TrainState, view: TrainView, z: np.ndarray) -> dict:
    sums = {"loss": 0.0, "loss_v2a": 0.0, "loss_a2v": 0.0, "classifier_loss": 0.0}
    faulty, n_rows, fallback = 0.0, 0, 0
    for idx in epoch_batches(state, len(view)):
        step = train_step(state, view, idx)
        n = len(idx)
        for key in sums:
            sums[key] += getattr(step, key) * n
        rates = np.concatenate([
            faulty_rate_rows(step.mask_a, step.sources_a, z, idx),
            faulty_rate_rows(step.mask_v, step.sources_v, z, idx)])
        rates = rates[~np.isnan(rates)]
        faulty += rates.sum()
        n_rows += len(rates)
        fallback += step.fallback_rows
    rec = {"epoch": state.epoch}
    rec.update({k: v / len(view) for k, v in sums.items()})
    rec["faulty_neg_rate"] = faulty / n_rows if n_rows else None
    rec["fallback_rows"] = fallback
    return rec


def save_checkpoint(state: TrainState, path) -> None:
    """JSON dump of config, parameters, libraries and pseudo-labels.

    Floats are written with repr precision so loading is exact.
    """
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": dict(line.split("=", 1) for line in state.cfg.to_lines()),
        "epoch": state.epoch,
        "encoders": {
            name: {"query": params_to_dict(enc.query), "key": params_to_dict(enc.key)}
            for name, enc in (("visual", state.enc_v), ("audio", state.enc_a))
        },
        "classifiers": {"visual": params_to_dict(state.cls_v), "audio": params_to_dict(state.cls_a)},
        "libraries": {"visual": state.lib_v.dumps(), "audio": state.lib_a.dumps()},
        "pseudo": {"labels": state.pseudo.labels.tolist(),
                   "ambiguity": state.pseudo.ambiguity.tolist()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> TrainState:
    from .config import coerce

    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidConfig(f"unsupported checkpoint version {doc.get('version')}")
    cfg = TrainConfig(**coerce(doc["config"]))
    encs = {name: ModalityEncoder(params_from_dict(d["query"]), params_from_dict(d["key"]))
            for name, d in doc["encoders"].items()}
    pseudo = PseudoState(len(doc["pseudo"]["labels"]))
    pseudo.labels = np.array(doc["pseudo"]["labels"], dtype=np.int64)
    pseudo.ambiguity = np.array(doc["pseudo"]["ambiguity"], dtype=np.int64)
    cls_v = params_from_dict(doc["classifiers"]["visual"])
    cls_a = params_from_dict(doc["classifiers"]["audio"])
    return TrainState(cfg, encs["visual"], encs["audio"], cls_v, cls_a,
                      SemanticLibrary.loads(doc["libraries"]["visual"]),
                      SemanticLibrary.loads(doc["libraries"]["audio"]), pseudo,
                      AdamState.for_params(encs["visual"].query),
                      AdamState.for_params(encs["audio"].query),
                      AdamState.for_params(cls_v), AdamState.for_params(cls_a),
                      substream(cfg.seed, "sampling"), doc["epoch"])
