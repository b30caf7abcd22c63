"""Ambiguity weighting on/off, with a check that both runs agree exactly
until the warm-up ends.

    python scripts/hard_mining_ablation.py --seeds 5
"""
import argparse
from pathlib import Path

import numpy as np

from avid_acsm.config import TrainConfig, load_config
from avid_acsm.experiments import METRICS, read_jsonl, run_train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out-dir", default="runs/hard_mining")
    args = ap.parse_args()
    base = load_config(args.config) if args.config else TrainConfig()
    out = Path(args.out_dir)
    acc = {"off": [], "ambiguity": []}
    for seed in range(args.seeds):
        hist = {}
        for mode in acc:
            run_dir = run_train(base.replace(hard_mining=mode, seed=seed),
                                out / f"{mode}_seed{seed}")
            hist[mode] = (run_dir / METRICS).read_text().splitlines()
            acc[mode].append(read_jsonl(run_dir / METRICS)[-1]["probe_acc"])
        warm = base.warmup_epochs
        same = hist["off"][:warm] == hist["ambiguity"][:warm]
        print(f"seed {seed}: off {acc['off'][-1]:.4f} ambiguity {acc['ambiguity'][-1]:.4f} "
              f"identical before epoch {warm}: {same}", flush=True)
    print(f"mean: off {np.mean(acc['off']):.4f} ambiguity {np.mean(acc['ambiguity']):.4f}")


if __name__ == "__main__":
    main()
