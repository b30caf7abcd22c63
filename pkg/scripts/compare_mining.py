"""acsm vs random contrastive sets over several seeds.

Writes one run directory per (mode, seed) plus a summary table:

    python scripts/compare_mining.py --out-dir runs/mining --seeds 5
"""
import argparse
from pathlib import Path

import numpy as np

from avid_acsm.config import TrainConfig, load_config
from avid_acsm.experiments import METRICS, read_jsonl, run_train


def faulty_rate_after_agreement(history, threshold):
    rates = [r["faulty_neg_rate"] for r in history
             if r["classifier_agreement"] > threshold and r["faulty_neg_rate"] is not None]
    return float(np.mean(rates)) if rates else float("nan")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out-dir", default="runs/mining")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--agreement", type=float, default=0.2)
    args = ap.parse_args()
    base = load_config(args.config) if args.config else TrainConfig()
    out = Path(args.out_dir)
    rows = ["mode\tseed\tprobe_acc\tfaulty_neg_rate\tfinal_agreement"]
    for mode in ("acsm", "random"):
        for seed in range(args.seeds):
            run_dir = run_train(base.replace(mining=mode, seed=seed), out / f"{mode}_seed{seed}")
            hist = read_jsonl(run_dir / METRICS)
            rows.append(f"{mode}\t{seed}\t{hist[-1]['probe_acc']!r}\t"
                        f"{faulty_rate_after_agreement(hist, args.agreement)!r}\t"
                        f"{hist[-1]['classifier_agreement']!r}")
            print(rows[-1], flush=True)
    (out / "summary.tsv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
