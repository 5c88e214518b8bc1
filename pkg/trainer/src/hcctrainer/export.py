"""Inference over all cases and the per-fold probability CSVs.

The CSV schema is the fusion pipeline's contract: header
lesion_id,p_hcc,p_aphe,p_ec,p_npw, probabilities in [0, 1], one row per
case, every case present. The APHE model consumes the 3-channel patches;
the other three consume the 4-channel ones.
"""

from __future__ import annotations

import os

import torch

from .backbone import Backbone3D
from .errors import TrainerError
from .patches import CRITERIA, PatchRecord, load_batch, scan_patches
from .training import TrainConfig, load_checkpoint, train

PROBS_HEADER = "lesion_id,p_hcc,p_aphe,p_ec,p_npw"


def predict_positive_probs(
    model: Backbone3D, records: list[PatchRecord], batch_size: int = 8
) -> dict[str, float]:
    """P(class 1) per lesion_id."""
    model.eval()
    out: dict[str, float] = {}
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            probs = model(load_batch(chunk))
            for record, p in zip(chunk, probs[:, 1].tolist()):
                out[record.lesion_id] = float(p)
    return out


def export_fold_probs(
    models: dict[str, Backbone3D],
    records_c4: list[PatchRecord],
    records_c3: list[PatchRecord],
    out_csv: str | os.PathLike,
    batch_size: int = 8,
) -> str:
    """One CSV from the four criterion models of a single fold."""
    missing = set(CRITERIA) - set(models)
    if missing:
        raise TrainerError(f"missing models for criteria: {sorted(missing)}")
    ids_c4 = {r.lesion_id for r in records_c4}
    ids_c3 = {r.lesion_id for r in records_c3}
    if ids_c4 != ids_c3:
        raise TrainerError("3-channel and 4-channel patch sets cover different cases")

    columns: dict[str, dict[str, float]] = {}
    for criterion in CRITERIA:
        records = records_c3 if criterion == "aphe" else records_c4
        columns[criterion] = predict_positive_probs(models[criterion], records, batch_size)

    out_csv = os.fspath(out_csv)
    with open(out_csv, "w", encoding="utf-8", newline="") as f:
        f.write(PROBS_HEADER + "\n")
        for lesion_id in sorted(ids_c4):
            values = ",".join(repr(columns[c][lesion_id]) for c in CRITERIA)
            f.write(f"{lesion_id},{values}\n")
    return out_csv


def export_fold_probs_from_checkpoints(
    checkpoint_paths: dict[str, str],
    patches_c4_dir,
    patches_c3_dir,
    out_csv,
) -> str:
    models = {name: load_checkpoint(path) for name, path in checkpoint_paths.items()}
    return export_fold_probs(
        models, scan_patches(patches_c4_dir), scan_patches(patches_c3_dir), out_csv
    )


def train_criterion_suite(
    patches_c4_dir,
    patches_c3_dir,
    outdir,
    k: int = 5,
    seed: int = 0,
    base_config: TrainConfig | None = None,
    save_checkpoints: bool = True,
) -> list[str]:
    """Train 4 criteria x k folds and write probs_fold{j}.csv for each fold."""
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    records_c4 = scan_patches(patches_c4_dir)
    records_c3 = scan_patches(patches_c3_dir)
    base = base_config or TrainConfig()

    csv_paths = []
    for fold in range(k):
        models: dict[str, Backbone3D] = {}
        for criterion in CRITERIA:
            config = TrainConfig(
                criterion=criterion,
                backbone=base.backbone,
                fold=fold,
                k=k,
                batch_size=base.batch_size,
                epochs=base.epochs,
                lr=base.lr,
                weight_decay=base.weight_decay,
                augment=base.augment,
                seed=seed,
                target_accuracy=base.target_accuracy,
            )
            records = records_c3 if criterion == "aphe" else records_c4
            result = train(config, records)
            models[criterion] = result.model
            if save_checkpoints:
                result.save(os.path.join(outdir, f"{criterion}_fold{fold}.pt"))
        csv_paths.append(
            export_fold_probs(
                models, records_c4, records_c3, os.path.join(outdir, f"probs_fold{fold}.csv")
            )
        )
    return csv_paths
