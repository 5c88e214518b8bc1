"""Exact AUC, stratified folds, and the two evaluation protocols.

``cross_validate`` runs stratified k-fold CV on one dataset;
``transfer_evaluate`` keeps the same k training splits but scores every fit
on an entire held-out test set. Reports carry per-fold AUCs for the four
variants (deep baseline, DLF, HF, DLF+HF) plus the improvement column, and
serialize byte-stably to JSON and an aligned text table.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError
from .model import (
    DeepProbs,
    FeatureSubset,
    LogisticFusion,
    assemble_matrix,
    load_deep_probs,
    tune_lambda,
)
from .radiomics import HandcraftedFeatures

VARIANTS = ("dl_baseline", "dlf", "hf", "dlf+hf")
VARIANT_LABELS = {
    "dl_baseline": "DL baseline",
    "dlf": "DLF",
    "hf": "HF",
    "dlf+hf": "DLF+HF",
}


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive scores above a random negative).

    Computed from average ranks, which handles ties exactly (a tied pair
    counts 1/2) and matches brute-force pair counting.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1D arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels == 1
    neg = labels == 0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be binary 0/1")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def lirads_to_prob(score: int) -> float:
    """Normalize a LI-RADS category (1..5) to a probability: score / 5."""
    score = int(score)
    if score < 1 or score > 5:
        raise DataError(f"LI-RADS score {score} outside 1..5")
    return score / 5.0


def read_radiologist_csv(path) -> dict[str, int]:
    """CSV with header lesion_id,lirads_score; scores must be 1..5."""
    out: dict[str, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if set(("lesion_id", "lirads_score")) - set(reader.fieldnames or ()):
            raise DataError(f"{path}: expected columns lesion_id,lirads_score")
        for row in reader:
            lesion_id = row["lesion_id"]
            if lesion_id in out:
                raise DataError(f"{path}: duplicate lesion_id {lesion_id!r}")
            score = int(row["lirads_score"])
            lirads_to_prob(score)  # range check
            out[lesion_id] = score
    return out


# ---------------------------------------------------------------------------
# Stratified folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    """Partition of lesion ids into k stratified folds."""

    assignments: dict[str, int]
    k: int
    seed: int
    fold_class_counts: tuple[tuple[int, int], ...]  # (n_pos, n_neg) per fold

    def fold_ids(self, j: int) -> list[str]:
        return sorted(i for i, f in self.assignments.items() if f == j)

    def train_ids(self, j: int) -> list[str]:
        return sorted(i for i, f in self.assignments.items() if f != j)


def stratified_folds(labels: dict[str, int], k: int, seed: int) -> FoldSplit:
    """Shuffle each class with a seeded generator and deal round-robin.

    Per-fold class counts deviate from exact proportionality by at most 1.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    ids = sorted(labels)
    if any(labels[i] not in (0, 1) for i in ids):
        raise DataError("labels must be binary 0/1")
    pos = [i for i in ids if labels[i] == 1]
    neg = [i for i in ids if labels[i] == 0]
    for name, members in (("positive", pos), ("negative", neg)):
        if len(members) < k:
            raise DataError(
                f"{name} class has {len(members)} members but k={k}; "
                f"reduce k to at most {len(members)}"
            )
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    counts = [[0, 0] for _ in range(k)]
    for class_idx, members in ((1, pos), (0, neg)):
        order = rng.permutation(len(members))
        for deal, idx in enumerate(order):
            fold = deal % k
            assignments[members[idx]] = fold
            counts[fold][0 if class_idx == 1 else 1] += 1
    return FoldSplit(
        assignments=assignments,
        k=k,
        seed=seed,
        fold_class_counts=tuple((p, n) for p, n in counts),
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class VariantResult:
    fold_aucs: list[float]
    lambdas: list[float] | None = None
    coefficients: list[dict[str, float]] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_aucs))

    @property
    def std(self) -> float:
        # Population (k-denominator) convention, stated in the report footer.
        return float(np.std(self.fold_aucs))

    def to_json_obj(self) -> dict:
        obj: dict = {
            "fold_aucs": self.fold_aucs,
            "mean": self.mean,
            "std": self.std,
        }
        if self.lambdas is not None:
            obj["lambda_per_fold"] = self.lambdas
        if self.coefficients is not None:
            obj["coefficients_per_fold"] = self.coefficients
        return obj


@dataclass
class EvalReport:
    protocol: str  # "cross-validation" or "transfer"
    train_name: str
    test_name: str
    model_name: str
    k: int
    seed: int
    n_train: int
    n_test: int
    variants: dict[str, VariantResult | None] = field(default_factory=dict)
    radiologist_auc: float | None = None

    @property
    def improvement(self) -> float | None:
        fused = self.variants.get("dlf+hf")
        base = self.variants.get("dl_baseline")
        if fused is None or base is None:
            return None
        return fused.mean - base.mean

    def to_json_obj(self) -> dict:
        return {
            "protocol": self.protocol,
            "train": self.train_name,
            "test": self.test_name,
            "model": self.model_name,
            "k": self.k,
            "seed": self.seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "variants": {
                name: (res.to_json_obj() if res is not None else None)
                for name, res in self.variants.items()
            },
            "improvement": self.improvement,
            "radiologist_auc": self.radiologist_auc,
            "std_convention": "population (k denominator) across folds",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def cell(res: VariantResult | None) -> str:
            if res is None:
                return "n/a"
            return f"{100 * res.mean:.1f} ± {100 * res.std:.1f}"

        headers = ["Model"] + [VARIANT_LABELS[v] for v in VARIANTS] + ["↑ w.r.t baseline"]
        imp = self.improvement
        row = [self.model_name] + [cell(self.variants.get(v)) for v in VARIANTS]
        row.append(f"{100 * imp:+.1f}" if imp is not None else "n/a")
        rows = [row]
        if self.radiologist_auc is not None:
            rows.append(
                ["Radiologist", f"{100 * self.radiologist_auc:.1f}", "", "", "", ""]
            )

        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        def fmt(cells: list[str]) -> str:
            return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

        title = (
            f"Train → Test: {self.train_name} → {self.test_name} "
            f"({self.k}-fold {self.protocol}, seed {self.seed})"
        )
        lines = [
            title,
            fmt(headers),
            fmt(["-" * w for w in widths]),
            *[fmt(r) for r in rows],
            "",
            "Notes: std across folds uses the population (k denominator) convention.",
            "HF is reported per row, without averaging across regularization choices.",
        ]
        return "\n".join(lines) + "\n"

    def save(self, outdir) -> tuple[str, str]:
        os.makedirs(outdir, exist_ok=True)
        json_path = os.path.join(outdir, "report.json")
        text_path = os.path.join(outdir, "report.txt")
        with open(json_path, "w", encoding="utf-8") as f:
            f.write(self.to_json())
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(self.to_text())
        return json_path, text_path


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------


def _check_case_coverage(ids, features, probs_per_fold, k):
    for lesion_id in ids:
        if lesion_id not in features:
            raise DataError(f"no handcrafted features for lesion {lesion_id!r}")
    if probs_per_fold is not None:
        if len(probs_per_fold) != k:
            raise DataError(f"need {k} per-fold probability maps, got {len(probs_per_fold)}")
        for j, fold_probs in enumerate(probs_per_fold):
            for lesion_id in ids:
                if lesion_id not in fold_probs:
                    raise DataError(f"fold {j} probabilities missing lesion {lesion_id!r}")


def _fit_variant(
    subset: FeatureSubset,
    train_ids,
    labels,
    features,
    fold_probs,
    lambda_grid,
    inner_folds,
    seed,
):
    X = assemble_matrix(train_ids, features, fold_probs, subset)
    y = np.array([labels[i] for i in train_ids])
    lam = tune_lambda(X, y, grid=lambda_grid, inner_folds=inner_folds, seed=seed, subset=subset)
    est = LogisticFusion(subset=subset, lam=lam).fit(X, y)
    return est, lam


def cross_validate(
    labels: dict[str, int],
    features: dict[str, HandcraftedFeatures],
    probs_per_fold: list[dict[str, DeepProbs]] | None,
    *,
    subsets=("dlf", "hf", "dlf+hf"),
    k: int = 5,
    seed: int = 0,
    lambda_grid=None,
    inner_folds: int = 3,
    radiologist: dict[str, int] | None = None,
    model_name: str = "fusion",
    dataset_name: str = "dataset",
) -> EvalReport:
    """Stratified k-fold CV: fit the fusion on train folds (with inner
    lambda tuning), score the held-out fold, for each requested variant.

    ``probs_per_fold[j]`` must come from deep models that never saw fold j.
    """
    ids = sorted(labels)
    subsets = tuple(FeatureSubset(s) for s in subsets)
    _check_case_coverage(ids, features, probs_per_fold, k)
    split = stratified_folds(labels, k, seed)

    results: dict[str, VariantResult | None] = {v: None for v in VARIANTS}
    if probs_per_fold is not None:
        results["dl_baseline"] = VariantResult(fold_aucs=[])
    for subset in subsets:
        if subset.needs_probs and probs_per_fold is None:
            continue
        results[subset.value] = VariantResult(fold_aucs=[], lambdas=[], coefficients=[])

    for j in range(k):
        train_ids = split.train_ids(j)
        val_ids = split.fold_ids(j)
        y_val = np.array([labels[i] for i in val_ids])
        fold_probs = probs_per_fold[j] if probs_per_fold is not None else None

        if results["dl_baseline"] is not None:
            scores = np.array([fold_probs[i].p_hcc for i in val_ids])
            results["dl_baseline"].fold_aucs.append(auc(scores, y_val))

        for subset in subsets:
            res = results[subset.value]
            if res is None:
                continue
            est, lam = _fit_variant(
                subset, train_ids, labels, features, fold_probs, lambda_grid, inner_folds, seed
            )
            X_val = assemble_matrix(val_ids, features, fold_probs, subset)
            res.fold_aucs.append(auc(est.predict_proba(X_val)[:, 1], y_val))
            res.lambdas.append(lam)
            res.coefficients.append(est.coefficient_magnitudes())

    radiologist_auc = None
    if radiologist is not None:
        scores = np.array([lirads_to_prob(radiologist[i]) for i in ids])
        radiologist_auc = auc(scores, np.array([labels[i] for i in ids]))

    return EvalReport(
        protocol="cross-validation",
        train_name=dataset_name,
        test_name=dataset_name,
        model_name=model_name,
        k=k,
        seed=seed,
        n_train=len(ids),
        n_test=len(ids),
        variants=results,
        radiologist_auc=radiologist_auc,
    )


def transfer_evaluate(
    train_labels: dict[str, int],
    train_features: dict[str, HandcraftedFeatures],
    test_labels: dict[str, int],
    test_features: dict[str, HandcraftedFeatures],
    train_probs_per_fold: list[dict[str, DeepProbs]] | None,
    test_probs_per_fold: list[dict[str, DeepProbs]] | None,
    *,
    subsets=("dlf", "hf", "dlf+hf"),
    k: int = 5,
    seed: int = 0,
    lambda_grid=None,
    inner_folds: int = 3,
    radiologist: dict[str, int] | None = None,
    model_name: str = "fusion",
    train_name: str = "train",
    test_name: str = "test",
) -> EvalReport:
    """Keep the training-set CV splits but validate every fit on the whole
    test set; fold-to-fold spread then reflects only the fit, which is why
    the reported stds come out smaller than in-domain CV.
    """
    train_ids = sorted(train_labels)
    test_ids = sorted(test_labels)
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DataError(f"train and test sets share lesion_ids: {sorted(overlap)[:5]}")
    subsets = tuple(FeatureSubset(s) for s in subsets)
    _check_case_coverage(train_ids, train_features, train_probs_per_fold, k)
    _check_case_coverage(test_ids, test_features, test_probs_per_fold, k)
    have_probs = train_probs_per_fold is not None and test_probs_per_fold is not None
    split = stratified_folds(train_labels, k, seed)
    y_test = np.array([test_labels[i] for i in test_ids])

    results: dict[str, VariantResult | None] = {v: None for v in VARIANTS}
    if have_probs:
        results["dl_baseline"] = VariantResult(fold_aucs=[])
    for subset in subsets:
        if subset.needs_probs and not have_probs:
            continue
        results[subset.value] = VariantResult(fold_aucs=[], lambdas=[], coefficients=[])

    for j in range(k):
        fit_ids = split.train_ids(j)
        train_fold_probs = train_probs_per_fold[j] if have_probs else None
        test_fold_probs = test_probs_per_fold[j] if have_probs else None

        if results["dl_baseline"] is not None:
            scores = np.array([test_fold_probs[i].p_hcc for i in test_ids])
            results["dl_baseline"].fold_aucs.append(auc(scores, y_test))

        for subset in subsets:
            res = results[subset.value]
            if res is None:
                continue
            est, lam = _fit_variant(
                subset, fit_ids, train_labels, train_features, train_fold_probs,
                lambda_grid, inner_folds, seed,
            )
            X_test = assemble_matrix(test_ids, test_features, test_fold_probs, subset)
            res.fold_aucs.append(auc(est.predict_proba(X_test)[:, 1], y_test))
            res.lambdas.append(lam)
            res.coefficients.append(est.coefficient_magnitudes())

    radiologist_auc = None
    if radiologist is not None:
        scores = np.array([lirads_to_prob(radiologist[i]) for i in test_ids])
        radiologist_auc = auc(scores, y_test)

    return EvalReport(
        protocol="transfer",
        train_name=train_name,
        test_name=test_name,
        model_name=model_name,
        k=k,
        seed=seed,
        n_train=len(train_ids),
        n_test=len(test_ids),
        variants=results,
        radiologist_auc=radiologist_auc,
    )


# ---------------------------------------------------------------------------
# Per-fold probability file discovery
# ---------------------------------------------------------------------------


def load_probs_dir(probs_dir, k: int, leaky_ok: bool = False) -> list[dict[str, DeepProbs]]:
    """Load probs_fold{j}.csv for j in 0..k-1 from a directory.

    A single global probs.csv is only accepted with ``leaky_ok`` (an explicit
    acknowledgment that validation folds were seen by the deep models).
    """
    probs_dir = os.fspath(probs_dir)
    fold_paths = [os.path.join(probs_dir, f"probs_fold{j}.csv") for j in range(k)]
    present = [p for p in fold_paths if os.path.exists(p)]
    if len(present) == len(fold_paths):
        return [load_deep_probs(p) for p in fold_paths]
    if present:
        missing = [os.path.basename(p) for p in fold_paths if not os.path.exists(p)]
        raise DataError(f"{probs_dir}: missing per-fold probability files: {missing}")
    global_path = os.path.join(probs_dir, "probs.csv")
    if os.path.exists(global_path):
        if not leaky_ok:
            raise ConfigError(
                f"{probs_dir} only holds a global probs.csv; pass --leaky-probs to "
                "acknowledge that validation folds were visible to the deep models"
            )
        shared = load_deep_probs(global_path)
        return [shared for _ in range(k)]
    raise DataError(f"{probs_dir}: no probs_fold{{j}}.csv files and no probs.csv")
