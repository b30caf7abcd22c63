"""Command-line interface: ``avid-acsm {train,eval,sweep}``.

Any config key can be overridden on the command line, e.g.
``avid-acsm train --config base.cfg --mining random --K=252``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig, coerce, load_config
from .errors import AcsmError
from .experiments import (CHECKPOINT, EVAL, METRICS, canonical_sweep_key, run_eval, run_sweep,
                          run_train)


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """``--key=value`` and ``--key value`` pairs."""
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise AcsmError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise AcsmError(f"missing value for {tok}")
            key, value = tok[2:], tokens[i + 1]
            i += 2
        out[key] = value
    return out


def resolve_config(path: str | None, overrides: dict[str, str]) -> TrainConfig:
    if path is None:
        return TrainConfig(**coerce(overrides)).validate()
    return load_config(path, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avid-acsm", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", allow_abbrev=False,
                       help="train one model and write metrics + checkpoint")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs/train")
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("eval", allow_abbrev=False,
                       help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")

    p = sub.add_parser("sweep", allow_abbrev=False,
                       help="train+eval over values of one key")
    p.add_argument("--config")
    p.add_argument("--key", required=True, help="K, C, mining, hard-mining or library-mode")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per value")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="runs/sweep")
    return parser


def cmd_train(args, overrides) -> int:
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = resolve_config(args.config, overrides)
    out = run_train(cfg, args.out_dir, args.checkpoint_every)
    last = (out / METRICS).read_text().splitlines()[-1:] if cfg.epochs else []
    print(f"trained {cfg.epochs} epochs -> {out / CHECKPOINT}")
    if last:
        rec = json.loads(last[0])
        print(f"final loss {rec['loss']:.4f}  probe_acc {rec['probe_acc']}  "
              f"faulty_neg_rate {rec['faulty_neg_rate']:.4f}")
    return 0


def cmd_eval(args, overrides) -> int:
    if overrides:
        raise AcsmError(f"eval takes no config overrides: {sorted(overrides)}")
    for label, path in (("checkpoint", args.checkpoint), ("dataset", args.dataset)):
        if not Path(path).is_file():
            raise AcsmError(f"{label} not found: {path}")
    rec = run_eval(args.checkpoint, args.dataset, args.out_dir, args.seed)
    print(f"probe_acc {rec['probe_acc']:.4f} (v {rec['probe_acc_v']:.4f}, "
          f"a {rec['probe_acc_a']:.4f}; shuffled {rec['shuffle_probe_acc']:.4f}, "
          f"chance {rec['chance']:.4f})")
    print(f"purity {rec['purity']:.4f}  nmi {rec['nmi']:.4f}  "
          f"agreement {rec['classifier_agreement']:.4f}  "
          f"within/cross cos {rec['within_cos']:.4f}/{rec['cross_cos']:.4f}")
    if args.out_dir:
        print(f"record appended to {Path(args.out_dir) / EVAL}")
    return 0


def cmd_sweep(args, overrides) -> int:
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    base = resolve_config(args.config, overrides)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    table = run_sweep(base, canonical_sweep_key(args.key), values, args.out_dir, args.seeds,
                      args.jobs)
    print(table.read_text(), end="")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, parse_overrides(rest))
    except (AcsmError, OSError, ValueError) as exc:
        print(f"avid-acsm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
