"""CLI for training criterion models and exporting per-fold probabilities."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import TrainerError
from .export import export_fold_probs_from_checkpoints, train_criterion_suite
from .patches import scan_patches
from .training import TrainConfig, train

log = logging.getLogger("hcctrainer")


def _base_config(args) -> TrainConfig:
    config = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()
    for name in ("epochs", "lr", "batch_size", "backbone", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    return config


def cmd_train(args) -> int:
    config = _base_config(args)
    config.criterion = args.criterion
    config.fold = args.fold
    config.k = args.k
    result = train(config, scan_patches(args.patches))
    result.save(args.out)
    log.info(
        "event=done stage=train criterion=%s fold=%d train_acc=%.3f out=%s",
        config.criterion, config.fold, result.final_accuracy, args.out,
    )
    return 0


def cmd_export(args) -> int:
    checkpoints = {}
    for pair in args.checkpoints.split(","):
        name, _, path = pair.partition("=")
        checkpoints[name.strip()] = path.strip()
    out = export_fold_probs_from_checkpoints(
        checkpoints, args.patches_c4, args.patches_c3, args.out
    )
    log.info("event=done stage=export out=%s", out)
    return 0


def cmd_suite(args) -> int:
    config = _base_config(args)
    paths = train_criterion_suite(
        args.patches_c4, args.patches_c3, args.outdir,
        k=args.k, seed=config.seed, base_config=config,
    )
    log.info("event=done stage=suite folds=%d outdir=%s", len(paths), args.outdir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcctrainer",
        description="Train the criterion CNNs on exported patches and emit "
        "probs_fold{j}.csv files for the fusion pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TrainConfig JSON")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--backbone", choices=["tiny", "small"], default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train one criterion model for one fold")
    p.add_argument("--patches", required=True, help="patch dir matching the criterion's channels")
    p.add_argument("--criterion", choices=["hcc", "aphe", "ec", "npw"], required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True, help="checkpoint path (.pt)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="write one probs_fold CSV from four checkpoints")
    p.add_argument("--checkpoints", required=True,
                   help="comma list hcc=path,aphe=path,ec=path,npw=path")
    p.add_argument("--patches-c4", required=True)
    p.add_argument("--patches-c3", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("suite", help="train all criteria across folds and export CSVs")
    p.add_argument("--patches-c4", required=True, help="hcc/ec/npw patches (4 channels)")
    p.add_argument("--patches-c3", required=True, help="aphe patches (3 channels)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--k", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        log.error("event=error kind=config message=%s", exc)
        return 2
    except TrainerError as exc:
        log.error("event=error kind=data message=%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
