"""Contrastive-set size sweep, K in {126, 252, 504, 1008} by default.

    python scripts/k_sweep.py --out-dir runs/k_sweep --seeds 3
"""
import argparse

from avid_acsm.config import TrainConfig, load_config
from avid_acsm.experiments import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--values", default="126,252,504,1008")
    ap.add_argument("--key", default="K", help="any sweep key; C gives the library-count sweep")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default="runs/k_sweep")
    args = ap.parse_args()
    base = load_config(args.config) if args.config else TrainConfig()
    table = run_sweep(base, args.key, args.values.split(","), args.out_dir, args.seeds, args.jobs)
    print(table.read_text(), end="")


if __name__ == "__main__":
    main()
