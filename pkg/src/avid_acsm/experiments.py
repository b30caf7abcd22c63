"""File-producing entry points behind the CLI: a training run, an evaluation
of a checkpoint on a dataset file, and a one-key sweep."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import synthdata
from .config import TrainConfig, canonical_key, coerce, substream
from .errors import InvalidConfig, InvalidSweepKey
from .evaluation import cluster_metrics, linear_probe, matched_accuracy, mining_diagnostics
from .trainer import (balanced_assignment, embed_all, load_checkpoint, predict_proba,
                      save_checkpoint, train)

SWEEP_KEYS = {"K": "set_size", "C": "n_libraries", "mining": "mining",
              "hard-mining": "hard_mining", "library-mode": "library_mode"}
MANIFEST = "manifest.txt"
METRICS = "metrics.jsonl"
CHECKPOINT = "checkpoint.json"
DATASET = "dataset.tsv"
EVAL = "eval.jsonl"


def dataset_seed(cfg: TrainConfig) -> int:
    return int(substream(cfg.seed, "data").integers(2**31))


def write_manifest(cfg: TrainConfig, out_dir: Path) -> Path:
    """key=value config echo; provenance goes in comment lines."""
    path = out_dir / MANIFEST
    lines = [f"# started={datetime.now(timezone.utc).isoformat(timespec='seconds')}",
             f"# out_dir={out_dir}",
             f"# artifacts={MANIFEST},{DATASET},{METRICS},{CHECKPOINT}"]
    path.write_text("\n".join(lines + cfg.to_lines()) + "\n")
    return path


def run_train(cfg: TrainConfig, out_dir, checkpoint_every: int = 0) -> Path:
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, out_dir)
    data = synthdata.generate(cfg.synthetic(), dataset_seed(cfg))
    data.save(out_dir / DATASET)
    result = train(cfg, data, metrics_path=out_dir / METRICS,
                   checkpoint_dir=out_dir if checkpoint_every else None,
                   checkpoint_every=checkpoint_every)
    save_checkpoint(result.state, out_dir / CHECKPOINT)
    return out_dir


def evaluate(checkpoint_path, dataset_path, seed: int | None = None) -> dict:
    state = load_checkpoint(checkpoint_path)
    data = synthdata.load(dataset_path)
    enc_dims = (state.enc_a.in_dim, state.enc_v.in_dim)
    data_dims = (data.a.shape[1], data.v.shape[1])
    if enc_dims != data_dims:
        raise InvalidConfig(f"dimension mismatch: checkpoint expects a={enc_dims[0]}, "
                            f"v={enc_dims[1]}; dataset has a={data_dims[0]}, v={data_dims[1]}")
    cfg = state.cfg
    seed = cfg.seed if seed is None else seed
    view, z = data.training_view(), data.z
    n_classes = int(z.max()) + 1
    q_v, q_a = embed_all(state, view)
    rec = {"checkpoint": Path(checkpoint_path).name, "dataset": Path(dataset_path).name,
           "seed": seed,
           "epoch": state.epoch, "n_samples": len(z)}
    for name, emb in (("v", q_v), ("a", q_a)):
        rep = linear_probe(emb, z, cfg.probe_split, cfg.probe_lr, cfg.probe_steps,
                           substream(seed, "probe"), n_classes=n_classes)
        rec[f"probe_acc_{name}"] = rep.test_acc
        rec[f"per_class_acc_{name}"] = rep.per_class_acc
    rec["probe_acc"] = 0.5 * (rec["probe_acc_v"] + rec["probe_acc_a"])
    # label-shuffle control: what the same probe reaches with no signal
    shuffled = substream(seed, "shuffle").permutation(z)
    control = linear_probe(q_v, shuffled, cfg.probe_split, cfg.probe_lr, cfg.probe_steps,
                           substream(seed, "probe"), n_classes=n_classes)
    rec["shuffle_probe_acc"] = control.test_acc
    rec["chance"] = 1.0 / n_classes
    probs = predict_proba(state, view)
    labels = balanced_assignment(probs) if cfg.label_refresh == "balanced" \
        else np.argmax(probs, axis=1)
    rec["purity"], rec["nmi"] = cluster_metrics(labels, z)
    rec["classifier_agreement"] = matched_accuracy(labels, z)
    state.pseudo.labels = labels
    diag = mining_diagnostics(state, z)
    for key in ("within_cos", "cross_cos", "faulty_neg_rate"):
        rec[key] = diag[key]
    rec["occupancy_audio"] = diag["audio"]["occupancy"]
    rec["occupancy_visual"] = diag["visual"]["occupancy"]
    return rec


def run_eval(checkpoint_path, dataset_path, out_dir=None, seed: int | None = None) -> dict:
    rec = evaluate(checkpoint_path, dataset_path, seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / EVAL, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return rec


def _one_run(cfg: TrainConfig, run_dir: Path) -> None:
    run_train(cfg, run_dir)
    run_eval(run_dir / CHECKPOINT, run_dir / DATASET, run_dir)


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def summarize_run(run_dir) -> dict:
    """Probe accuracy from the eval record; faulty-negative rate averaged
    over the training epochs that logged one."""
    run_dir = Path(run_dir)
    ev = read_jsonl(run_dir / EVAL)[-1]
    rates = [r["faulty_neg_rate"] for r in read_jsonl(run_dir / METRICS)
             if r["faulty_neg_rate"] is not None]
    return {"probe_acc": ev["probe_acc"],
            "faulty_neg_rate": float(np.mean(rates)) if rates else float("nan")}


def sweep_plan(base: TrainConfig, key: str, values, seeds) -> list[tuple[str, list, str | None]]:
    """[(value, [(seed, cfg)...], error)] with invalid values carrying an error."""
    if key not in SWEEP_KEYS:
        raise InvalidSweepKey(f"sweep key must be one of {sorted(SWEEP_KEYS)}, got {key!r}")
    field = SWEEP_KEYS[key]
    plan = []
    for value in values:
        try:
            runs = [(s, base.replace(seed=s, **coerce({field: value})).validate()) for s in seeds]
            plan.append((str(value), runs, None))
        except InvalidConfig as exc:
            plan.append((str(value), [], str(exc)))
    return plan


def run_sweep(base: TrainConfig, key: str, values, out_dir, n_seeds: int = 3,
              jobs: int = 1) -> Path:
    out_dir = Path(out_dir)
    seeds = [base.seed + s for s in range(n_seeds)]
    plan = sweep_plan(base, key, values, seeds)
    jobs_list = [(cfg, out_dir / f"{key}={value}" / f"seed={seed}")
                 for value, runs, err in plan if err is None for seed, cfg in runs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_one_run, *zip(*jobs_list)))
    else:
        for cfg, run_dir in jobs_list:
            _one_run(cfg, run_dir)
    write_sweep_table(out_dir, key, plan)
    return out_dir / "sweep.tsv"


def write_sweep_table(out_dir: Path, key: str, plan) -> None:
    rows = ["\t".join([key, "mean_probe_acc", "std_probe_acc", "faulty_neg_rate", "n_seeds",
                       "status"])]
    for value, runs, err in plan:
        if err is not None:
            rows.append("\t".join([value, "nan", "nan", "nan", "0", f"error: {err}"]))
            continue
        stats = [summarize_run(out_dir / f"{key}={value}" / f"seed={seed}") for seed, _ in runs]
        acc = np.array([s["probe_acc"] for s in stats])
        fnr = np.array([s["faulty_neg_rate"] for s in stats])
        rows.append("\t".join([value, repr(float(acc.mean())), repr(float(acc.std())),
                               repr(float(fnr.mean())), str(len(stats)), "ok"]))
    (out_dir / "sweep.tsv").write_text("\n".join(rows) + "\n")


def read_sweep_table(path) -> list[dict]:
    header, *lines = Path(path).read_text().splitlines()
    cols = header.split("\t")
    out = []
    for line in lines:
        row = dict(zip(cols, line.split("\t")))
        for c in ("mean_probe_acc", "std_probe_acc", "faulty_neg_rate"):
            row[c] = float(row[c])
        out.append(row)
    return out


def canonical_sweep_key(key: str) -> str:
    """Accept either the table spelling (K, hard-mining) or the config field name."""
    if key in SWEEP_KEYS:
        return key
    field = canonical_key(key)
    for k, f in SWEEP_KEYS.items():
        if f == field:
            return k
    return key

