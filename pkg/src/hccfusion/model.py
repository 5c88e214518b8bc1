"""Feature-vector assembly and the regularized logistic-regression fusion.

The final classifier combines four deep-model probabilities with the
handcrafted features into one vector (canonical order below) and fits

    L(w, a) = (1/n) * sum_i log(1 + exp(-y_i (w . x_i + a))) + lambda * ||w||^2

with y in {-1, +1}, features z-scored with training statistics, and the
intercept left unregularized. A damped Newton iteration drives the gradient
infinity-norm below 1e-8; the whole fit is deterministic given its inputs.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning

from .errors import DataError
from .radiomics import HandcraftedFeatures

COMPONENT_NAMES = (
    "p_hcc",
    "p_aphe",
    "p_ec",
    "p_npw",
    "f_aphe",
    "f_ec",
    "f_npw",
    "size_mm",
)

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-3.0, 3.0, 13))


class FeatureSubset(Enum):
    """Which feature families enter the fusion; size is always included."""

    DLF_ONLY = "dlf"
    HF_ONLY = "hf"
    DLF_PLUS_HF = "dlf+hf"

    @property
    def components(self) -> tuple[str, ...]:
        if self is FeatureSubset.DLF_ONLY:
            return ("p_hcc", "p_aphe", "p_ec", "p_npw", "size_mm")
        if self is FeatureSubset.HF_ONLY:
            return ("f_aphe", "f_ec", "f_npw", "size_mm")
        return COMPONENT_NAMES

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def needs_probs(self) -> bool:
        return self is not FeatureSubset.HF_ONLY


@dataclass(frozen=True)
class DeepProbs:
    """Per-criterion probabilities from the four deep sub-models."""

    p_hcc: float
    p_aphe: float
    p_ec: float
    p_npw: float

    def __post_init__(self) -> None:
        for name in ("p_hcc", "p_aphe", "p_ec", "p_npw"):
            v = getattr(self, name)
            if not (np.isfinite(v) and 0.0 <= v <= 1.0):
                raise DataError(f"{name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_hcc, self.p_aphe, self.p_ec, self.p_npw], dtype=np.float64)


PROBS_COLUMNS = ("lesion_id", "p_hcc", "p_aphe", "p_ec", "p_npw")


def load_deep_probs(path) -> dict[str, DeepProbs]:
    """Strict CSV loader: header lesion_id,p_hcc,p_aphe,p_ec,p_npw."""
    out: dict[str, DeepProbs] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = set(PROBS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            lesion_id = row["lesion_id"]
            if lesion_id in out:
                raise DataError(f"{path}: duplicate lesion_id {lesion_id!r}")
            try:
                probs = DeepProbs(
                    p_hcc=float(row["p_hcc"]),
                    p_aphe=float(row["p_aphe"]),
                    p_ec=float(row["p_ec"]),
                    p_npw=float(row["p_npw"]),
                )
            except ValueError as exc:
                raise DataError(f"{path}: bad value for {lesion_id!r}: {exc}") from exc
            except DataError as exc:
                raise DataError(f"{path}: {lesion_id!r}: {exc}") from exc
            out[lesion_id] = probs
    return out


def write_probs_csv(rows: dict[str, DeepProbs], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(PROBS_COLUMNS) + "\n")
        for lesion_id, p in rows.items():
            f.write(f"{lesion_id},{p.p_hcc!r},{p.p_aphe!r},{p.p_ec!r},{p.p_npw!r}\n")


def assemble(
    features: HandcraftedFeatures,
    probs: DeepProbs | None,
    subset: FeatureSubset | str = FeatureSubset.DLF_PLUS_HF,
) -> np.ndarray:
    """One feature vector in canonical component order, masked by subset.

    Excluded components are dropped, never zero-filled.
    """
    subset = FeatureSubset(subset)
    if subset.needs_probs and probs is None:
        raise DataError(f"subset {subset.value} requires deep probabilities")
    pool = {
        "f_aphe": features.f_aphe,
        "f_ec": features.f_ec,
        "f_npw": features.f_npw,
        "size_mm": features.size_mm,
    }
    if probs is not None:
        pool.update(p_hcc=probs.p_hcc, p_aphe=probs.p_aphe, p_ec=probs.p_ec, p_npw=probs.p_npw)
    return np.array([pool[name] for name in subset.components], dtype=np.float64)


def assemble_matrix(
    ids: list[str],
    features: dict[str, HandcraftedFeatures],
    probs: dict[str, DeepProbs] | None,
    subset: FeatureSubset | str,
) -> np.ndarray:
    subset = FeatureSubset(subset)
    rows = []
    for lesion_id in ids:
        if lesion_id not in features:
            raise DataError(f"no handcrafted features for lesion {lesion_id!r}")
        p = None
        if subset.needs_probs:
            if probs is None or lesion_id not in probs:
                raise DataError(f"no deep probabilities for lesion {lesion_id!r}")
            p = probs[lesion_id]
        rows.append(assemble(features[lesion_id], p, subset))
    return np.vstack(rows) if rows else np.empty((0, subset.n_components))


# ---------------------------------------------------------------------------
# Loss and gradient (module level so tests can finite-difference them)
# ---------------------------------------------------------------------------


def logreg_loss(w: np.ndarray, intercept: float, X: np.ndarray, y_pm: np.ndarray, lam: float) -> float:
    t = y_pm * (X @ w + intercept)
    return float(np.mean(np.logaddexp(0.0, -t)) + lam * (w @ w))


def logreg_gradient(
    w: np.ndarray, intercept: float, X: np.ndarray, y_pm: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    t = y_pm * (X @ w + intercept)
    r = y_pm * expit(-t)  # d/dt log(1+e^-t) = -sigmoid(-t)
    grad_w = -(X.T @ r) / len(y_pm) + 2.0 * lam * w
    grad_a = -float(np.mean(r))
    return grad_w, grad_a


class LogisticFusion(ClassifierMixin, BaseEstimator):
    """L2-regularized logistic regression over the fusion feature vector.

    Parameters
    ----------
    subset : FeatureSubset, str or None, default="dlf+hf"
        Which feature families the input columns carry ("dlf", "hf",
        "dlf+hf"); fixes the expected column count and names. None accepts
        any column count with generic component names.
    lam : float, default=1.0
        L2 strength on the weights (the intercept is unregularized).
    tol : float, default=1e-10
        Convergence threshold on the gradient infinity-norm.
    max_iter : int, default=100
        Newton iteration cap.

    Attributes
    ----------
    coef_ : ndarray of shape (n_components,)
        Weights on the standardized features.
    intercept_ : float
    feature_means_, feature_stds_ : ndarray
        Training-fold standardization statistics; constant columns get
        std 1 so they carry no signal after centering.
    """

    def __init__(
        self,
        subset: FeatureSubset | str = "dlf+hf",
        lam: float = 1.0,
        tol: float = 1e-10,
        max_iter: int = 100,
    ):
        self.subset = subset
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter

    # -- internals --------------------------------------------------------

    def _validate_X(self, X: np.ndarray, expected_cols: int | None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if expected_cols is not None and X.shape[1] != expected_cols:
            raise ValueError(f"expected {expected_cols} feature columns, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature values")
        return X

    def fit(self, X, y) -> "LogisticFusion":
        subset = FeatureSubset(self.subset) if self.subset is not None else None
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        X = self._validate_X(X, subset.n_components if subset is not None else None)
        y = np.asarray(y)
        if set(np.unique(y)) != {0, 1}:
            raise ValueError("need binary labels with both classes present")
        if len(y) != len(X):
            raise ValueError("X and y length mismatch")

        means = X.mean(axis=0)
        stds = X.std(axis=0)
        stds = np.where(stds == 0.0, 1.0, stds)
        Xs = (X - means) / stds
        y_pm = 2.0 * y.astype(np.float64) - 1.0

        n, d = Xs.shape
        w = np.zeros(d)
        a = 0.0
        loss = logreg_loss(w, a, Xs, y_pm, self.lam)
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            grad_w, grad_a = logreg_gradient(w, a, Xs, y_pm, self.lam)
            gnorm = max(np.abs(grad_w).max(initial=0.0), abs(grad_a))
            if gnorm <= self.tol:
                n_iter -= 1
                break

            t = y_pm * (Xs @ w + a)
            s = expit(t) * expit(-t)
            Xa = np.hstack([Xs, np.ones((n, 1))])
            H = (Xa.T * s) @ Xa / n
            H[:d, :d] += 2.0 * self.lam * np.eye(d)
            H[np.diag_indices_from(H)] += 1e-12  # keeps separable lam=0 fits solvable
            g = np.append(grad_w, grad_a)
            step = np.linalg.solve(H, -g)

            # Backtracking keeps the global phase monotone; once the gradient
            # is small, loss differences fall below float resolution, so the
            # local phase takes the pure Newton step (quadratic convergence).
            alpha = 1.0
            if gnorm >= 1e-6:
                for _ in range(60):
                    w_new = w + alpha * step[:d]
                    a_new = a + alpha * step[d]
                    loss_new = logreg_loss(w_new, a_new, Xs, y_pm, self.lam)
                    if loss_new <= loss + 1e-4 * alpha * float(g @ step):
                        break
                    alpha *= 0.5
            else:
                w_new = w + step[:d]
                a_new = a + step[d]
                loss_new = logreg_loss(w_new, a_new, Xs, y_pm, self.lam)
            w, a, loss = w_new, a_new, loss_new

        grad_w, grad_a = logreg_gradient(w, a, Xs, y_pm, self.lam)
        gnorm = max(np.abs(grad_w).max(initial=0.0), abs(grad_a))
        if gnorm > 1e-8:
            warnings.warn(
                f"fusion fit stopped at gradient norm {gnorm:.3e} > 1e-8 "
                f"(lam={self.lam}); results may be off-optimum",
                ConvergenceWarning,
                stacklevel=2,
            )

        self.subset_ = subset
        self.component_names_ = (
            subset.components if subset is not None else tuple(f"x{i}" for i in range(d))
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        self.coef_ = w
        self.intercept_ = float(a)
        self.feature_means_ = means
        self.feature_stds_ = stds
        self.n_iter_ = n_iter
        self.final_loss_ = loss
        self.gradient_norm_ = float(gnorm)
        self.converged_ = bool(gnorm <= 1e-8)
        return self

    def decision_function(self, X) -> np.ndarray:
        X = self._validate_X(X, self.n_features_in_)
        Xs = (X - self.feature_means_) / self.feature_stds_
        return Xs @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.0).astype(int)

    def coefficient_magnitudes(self) -> dict[str, float]:
        """|weight| per component, on the standardized (comparable) scale."""
        return {name: float(abs(w)) for name, w in zip(self.component_names_, self.coef_)}

    # -- serialization ----------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "subset": self.subset_.value if self.subset_ is not None else None,
            "weights": [float(v) for v in self.coef_],
            "intercept": self.intercept_,
            "lambda": float(self.lam),
            "means": [float(v) for v in self.feature_means_],
            "stds": [float(v) for v in self.feature_stds_],
            "component_names": list(self.component_names_),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_obj(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LogisticFusion":
        model = cls(subset=obj["subset"], lam=obj["lambda"])
        subset = FeatureSubset(obj["subset"]) if obj["subset"] is not None else None
        model.subset_ = subset
        model.component_names_ = tuple(obj["component_names"])
        if subset is not None and list(obj["component_names"]) != list(subset.components):
            raise DataError("component_names do not match the declared subset")
        model.classes_ = np.array([0, 1])
        model.coef_ = np.asarray(obj["weights"], dtype=np.float64)
        model.intercept_ = float(obj["intercept"])
        model.feature_means_ = np.asarray(obj["means"], dtype=np.float64)
        model.feature_stds_ = np.asarray(obj["stds"], dtype=np.float64)
        model.n_features_in_ = len(model.coef_)
        if not (len(model.coef_) == len(model.feature_means_) == len(model.feature_stds_)):
            raise DataError("model arrays disagree on dimension")
        if subset is not None and len(model.coef_) != subset.n_components:
            raise DataError("model arrays do not match the subset dimension")
        return model

    @classmethod
    def load(cls, path) -> "LogisticFusion":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json_obj(json.load(f))


def tune_lambda(
    X,
    y,
    grid=None,
    inner_folds: int = 3,
    seed: int = 0,
    subset: FeatureSubset | str = "dlf+hf",
    return_scores: bool = False,
):
    """Pick the grid value maximizing mean inner-fold validation AUC.

    Inner folds are stratified and seeded; exact ties break toward the
    larger (more regularized) lambda.
    """
    from .evaluation import auc, stratified_folds  # deferred: avoids an import cycle

    grid = sorted(float(g) for g in (DEFAULT_LAMBDA_GRID if grid is None else grid))
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    labels = {f"{i:06d}": int(y[i]) for i in range(len(y))}
    split = stratified_folds(labels, inner_folds, seed)
    folds = [
        (np.array([int(i) for i in split.train_ids(j)]), np.array([int(i) for i in split.fold_ids(j)]))
        for j in range(inner_folds)
    ]

    mean_scores = []
    for lam in grid:
        scores = []
        for train_idx, val_idx in folds:
            est = LogisticFusion(subset=subset, lam=lam).fit(X[train_idx], y[train_idx])
            scores.append(auc(est.predict_proba(X[val_idx])[:, 1], y[val_idx]))
        mean_scores.append(float(np.mean(scores)))

    best_lam, best_score = grid[0], mean_scores[0]
    for lam, score in zip(grid[1:], mean_scores[1:]):
        if score >= best_score:  # ties move toward stronger regularization
            best_lam, best_score = lam, score
    if return_scores:
        return best_lam, dict(zip(grid, mean_scores))
    return best_lam
