"""Command-line entry point wiring the pipeline stages.

Subcommands: phantom, preprocess, patches, features, stub-probs, evaluate.
Logs are line-oriented key=value records on stderr so runs can be audited
mechanically. Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import evaluation, phantom, preprocess, radiomics
from .cases import CaseRecord, load_manifest, load_case, save_case, save_manifest
from .errors import ConfigError, DataError, FusionError
from .volume import read_mask

log = logging.getLogger("hccfusion")


def _parse_lambda_grid(text: str | None):
    if text is None:
        return None
    try:
        grid = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --lambda-grid: {exc}") from exc
    if not grid or any(g < 0 for g in grid):
        raise ConfigError("--lambda-grid needs nonnegative comma-separated values")
    return grid


def _run_per_case(worker, tasks, jobs: int):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# -- preprocess -------------------------------------------------------------


def _preprocess_one(task):
    record, base_dir, outdir = task
    try:
        case = load_case(record, base_dir)
        moving = {}
        if record.arterial_liver:
            moving["arterial"] = read_mask(os.path.join(base_dir, record.arterial_liver))
        if record.delayed_liver:
            moving["delayed"] = read_mask(os.path.join(base_dir, record.delayed_liver))
        out = preprocess.preprocess_case(case, moving_livers=moving or None)
        return record.lesion_id, save_case(out, outdir), None
    except (DataError, FileNotFoundError) as exc:
        return record.lesion_id, None, str(exc)


def cmd_preprocess(args) -> int:
    records = load_manifest(args.manifest)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.outdir, exist_ok=True)
    kept: list[CaseRecord] = []
    tasks = []
    for record in records:
        if not record.delayed:
            log.info("event=skip stage=preprocess lesion_id=%s reason=missing_delayed", record.lesion_id)
            continue
        tasks.append((record, base_dir, args.outdir))
    for lesion_id, new_record, reason in _run_per_case(_preprocess_one, tasks, args.jobs):
        if new_record is None:
            log.info("event=skip stage=preprocess lesion_id=%s reason=%s", lesion_id, reason)
            continue
        kept.append(new_record)
        log.info("event=preprocess lesion_id=%s status=ok", lesion_id)
    save_manifest(kept, os.path.join(args.outdir, "manifest.json"))
    log.info("event=done stage=preprocess cases=%d skipped=%d", len(kept), len(records) - len(kept))
    return 0


# -- patches ----------------------------------------------------------------


def _patch_one(task):
    record, base_dir, outdir, mode = task
    try:
        case = load_case(record, base_dir)
        p = preprocess.extract_patch(case, mode)
        path = os.path.join(outdir, f"{record.lesion_id}_{mode}")
        preprocess.write_patch(p, path)
        return record.lesion_id, (p.lesion_coverage, p.coverage_warning), None
    except (DataError, FileNotFoundError) as exc:
        return record.lesion_id, None, str(exc)


def cmd_patches(args) -> int:
    records = load_manifest(args.manifest)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.outdir, exist_ok=True)
    mode = preprocess.PatchMode(args.mode)
    tasks = []
    for record in records:
        if mode is not preprocess.PatchMode.APHE and not record.delayed:
            log.info("event=skip stage=patches lesion_id=%s reason=missing_delayed", record.lesion_id)
            continue
        tasks.append((record, base_dir, args.outdir, mode.value))
    written = 0
    for lesion_id, result, reason in _run_per_case(_patch_one, tasks, args.jobs):
        if result is None:
            log.info("event=skip stage=patches lesion_id=%s reason=%s", lesion_id, reason)
            continue
        coverage, warning = result
        written += 1
        log.info(
            "event=patch lesion_id=%s coverage=%.4f warning=%d", lesion_id, coverage, int(warning)
        )
    log.info("event=done stage=patches cases=%d", written)
    return 0


# -- features ---------------------------------------------------------------


def _features_one(task):
    record, base_dir = task
    try:
        case = load_case(record, base_dir)
        return record.lesion_id, radiomics.compute_features(case), None
    except (DataError, FileNotFoundError) as exc:
        return record.lesion_id, None, str(exc)


def cmd_features(args) -> int:
    records = load_manifest(args.manifest)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    tasks = [(record, base_dir) for record in records]
    rows, skipped = {}, 0
    for lesion_id, hf, reason in _run_per_case(_features_one, tasks, args.jobs):
        if hf is None:
            log.info("event=skip stage=features lesion_id=%s reason=%s", lesion_id, reason)
            skipped += 1
            continue
        rows[lesion_id] = hf
        log.info(
            "event=features lesion_id=%s f_aphe=%r f_ec=%r f_npw=%r size_mm=%r",
            lesion_id, hf.f_aphe, hf.f_ec, hf.f_npw, hf.size_mm,
        )
    radiomics.write_features_csv(rows, args.out)
    log.info("event=done stage=features cases=%d skipped=%d out=%s", len(rows), skipped, args.out)
    return 0


# -- phantom ----------------------------------------------------------------


def cmd_phantom(args) -> int:
    if args.config:
        cfg = phantom.load_phantom_config(args.config)
    else:
        cfg = phantom.PhantomConfig()
    overrides = {}
    if args.n_cases is not None:
        overrides["n_cases"] = args.n_cases
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.noise_std is not None:
        overrides["noise_std_hu"] = args.noise_std
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    manifest_path = phantom.generate_dataset(cfg, args.outdir)
    log.info("event=done stage=phantom cases=%d manifest=%s", cfg.n_cases, manifest_path)
    return 0


# -- stub probabilities -------------------------------------------------------


def cmd_stub_probs(args) -> int:
    records = load_manifest(args.manifest)
    cases = {}
    for r in records:
        if r.label is None:
            log.info("event=skip stage=stub-probs lesion_id=%s reason=missing_label", r.lesion_id)
            continue
        cases[r.lesion_id] = (r.label, r.lirads)
    if not cases:
        raise DataError("no labeled cases in the manifest")
    paths = phantom.write_stub_probs_dir(
        cases, args.outdir, k=args.k, flip_prob=args.flip_prob, seed=args.seed
    )
    log.info("event=done stage=stub-probs files=%d outdir=%s", len(paths), args.outdir)
    return 0


# -- evaluate -----------------------------------------------------------------


def _labels_and_features(manifest_path, features_path):
    records = load_manifest(manifest_path)
    features = radiomics.read_features_csv(features_path)
    labels = {}
    for r in records:
        if r.label is None:
            log.info("event=skip stage=evaluate lesion_id=%s reason=missing_label", r.lesion_id)
            continue
        if r.lesion_id not in features:
            log.info("event=skip stage=evaluate lesion_id=%s reason=missing_features", r.lesion_id)
            continue
        labels[r.lesion_id] = r.label
    if not labels:
        raise DataError(f"{manifest_path}: no cases with both a label and features")
    return labels, features


def cmd_evaluate(args) -> int:
    lambda_grid = _parse_lambda_grid(args.lambda_grid)
    subsets = ("dlf", "hf", "dlf+hf") if args.subset == "all" else (args.subset,)
    labels, features = _labels_and_features(args.manifest, args.features)

    probs_per_fold = None
    if args.probs_dir:
        probs_per_fold = evaluation.load_probs_dir(args.probs_dir, args.k, args.leaky_probs)

    radiologist = None
    if args.radiologist:
        radiologist = evaluation.read_radiologist_csv(args.radiologist)

    if args.test_manifest:
        if not args.test_features:
            raise ConfigError("--test-manifest requires --test-features")
        test_labels, test_features = _labels_and_features(args.test_manifest, args.test_features)
        test_probs_per_fold = None
        if args.test_probs_dir:
            test_probs_per_fold = evaluation.load_probs_dir(
                args.test_probs_dir, args.k, args.leaky_probs
            )
        if (probs_per_fold is None) != (test_probs_per_fold is None):
            raise ConfigError("transfer needs probability dirs for both sets, or neither")
        report = evaluation.transfer_evaluate(
            labels, features, test_labels, test_features,
            probs_per_fold, test_probs_per_fold,
            subsets=subsets, k=args.k, seed=args.seed, lambda_grid=lambda_grid,
            radiologist=radiologist, model_name=args.model_name,
            train_name="train", test_name="test",
        )
    else:
        report = evaluation.cross_validate(
            labels, features, probs_per_fold,
            subsets=subsets, k=args.k, seed=args.seed, lambda_grid=lambda_grid,
            radiologist=radiologist, model_name=args.model_name, dataset_name="train",
        )

    json_path, text_path = report.save(args.outdir)
    log.info("event=done stage=evaluate report_json=%s report_txt=%s", json_path, text_path)
    sys.stdout.write(report.to_text())
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hccfusion",
        description="Liver lesion classification pipeline: phantom generation, "
        "preprocessing, patches, handcrafted features, and fused evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--config", help="phantom config JSON (defaults used if omitted)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--n-cases", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-std", type=float, default=None)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="register and resample cases to the common grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("patches", help="export lesion-centered patches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["hcc", "aphe", "ec", "npw"], required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("features", help="compute handcrafted features to CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("stub-probs", help="write label-derived stub probability CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-prob", type=float, default=0.3)
    p.set_defaults(func=cmd_stub_probs)

    p = sub.add_parser("evaluate", help="cross-validate or transfer-evaluate the fusion")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="features CSV for the train set")
    p.add_argument("--probs-dir", help="directory with probs_fold{j}.csv files")
    p.add_argument("--subset", choices=["dlf", "hf", "dlf+hf", "all"], default="all")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", help="comma-separated lambda values")
    p.add_argument("--outdir", required=True)
    p.add_argument("--test-manifest", help="evaluate each fit on this full test set")
    p.add_argument("--test-features", help="features CSV for the test set")
    p.add_argument("--test-probs-dir", help="per-fold probability CSVs for the test set")
    p.add_argument("--leaky-probs", action="store_true",
                   help="accept a single global probs.csv (deep models saw all folds)")
    p.add_argument("--radiologist", help="CSV lesion_id,lirads_score for a reader row")
    p.add_argument("--model-name", default="fusion")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("event=error kind=config message=%s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("event=error kind=config message=%s", exc)
        return 2
    except (DataError, FusionError, OSError) as exc:
        log.error("event=error kind=data message=%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
