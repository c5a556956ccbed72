"""Linear models over footprints: L2 logistic regression, ridge, metrics.

The classifier objective is

    J(w, b) = 0.5 * ||w||^2 + C * sum_i log(1 + exp(-y_i * (w.x_i + b)))

with y in {-1, +1} and an unpenalized intercept, so C multiplies the data
loss (larger C = weaker regularization). Value and gradient are computed
with the sparse kernels; the convex minimization itself is delegated to
L-BFGS-B from scipy.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import expit
from scipy.stats import rankdata

from . import _kernels
from .data import FootprintMatrix

logger = logging.getLogger(__name__)

KIND_CLASSIFIER = "binary-classifier"
KIND_REGRESSOR = "continuous-regressor"

DEFAULT_C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
DEFAULT_ALPHA_GRID = (1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3)


class ConvergenceError(RuntimeError):
    """Raised when the optimizer fails both stopping criteria.

    Carries the final gradient infinity-norm as .grad_norm.
    """

    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = float(grad_norm)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Trained linear model: item weights, intercept, regularization setting.

    C holds the inverse regularization strength for classifiers and the
    ridge penalty for regressors. kind distinguishes the two.
    """

    weights: np.ndarray
    intercept: float
    C: float
    kind: str = KIND_CLASSIFIER

    @property
    def n_items(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ThresholdSpec:
    """A decision threshold: the k-th largest score at quantile q.

    k = max(1, floor(n * (1 - q))). Scores >= value count as positive;
    cloaking succeeds only strictly below value.
    """

    quantile: float
    value: float
    source: str = ""


# ---------------------------------------------------------------------------
# logistic regression


def logreg_value_and_grad(
    m: FootprintMatrix, y01: np.ndarray, w: np.ndarray, b: float, C: float
) -> tuple[float, np.ndarray, float]:
    """Objective value and analytic gradient at (w, b).

    y01 holds labels in {0, 1}; internally they map to {-1, +1}.
    """
    y_signed = 2.0 * y01 - 1.0
    margins = _kernels.row_margins(m.indptr, m.indices, w, b)
    z = y_signed * margins
    loss = np.logaddexp(0.0, -z).sum()
    value = 0.5 * float(w @ w) + C * float(loss)
    coef = C * (-y_signed * expit(-z))
    grad_w = w + _kernels.scatter_add_rows(m.indptr, m.indices, coef, m.n_items)
    grad_b = float(coef.sum())
    return value, grad_w, grad_b


def train_logreg_l2(
    m: FootprintMatrix,
    y01: np.ndarray,
    C: float = 1.0,
    max_iter: int = 1000,
) -> LinearModel:
    """Fit L2-regularized logistic regression on binary footprint rows.

    Stops at relative objective change < 1e-8 or gradient infinity-norm
    < 1e-6, whichever first; raises ConvergenceError (with the final
    gradient norm) if neither is reached within max_iter iterations.
    """
    y01 = np.asarray(y01, dtype=np.float64)
    if y01.shape != (m.n_users,):
        raise ValueError("labels not aligned with matrix users")
    if np.isnan(y01).any():
        raise ValueError("labels contain missing values; select labeled users first")
    classes = np.unique(y01)
    if classes.size < 2:
        raise ValueError("training labels contain a single class")
    if not set(classes) <= {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if C <= 0:
        raise ValueError("C must be positive")

    n_items = m.n_items

    def fun(x):
        w = x[:n_items]
        b = x[n_items]
        value, grad_w, grad_b = logreg_value_and_grad(m, y01, w, b, C)
        return value, np.concatenate((grad_w, [grad_b]))

    x0 = np.zeros(n_items + 1)
    res = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": max_iter,
            "maxfun": max_iter * 4,
            "ftol": 1e-8,
            "gtol": 1e-6,
        },
    )
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else math.inf
    if not res.success and grad_norm >= 1e-6:
        raise ConvergenceError(
            f"logistic regression did not converge: {res.message} "
            f"(final gradient norm {grad_norm:.3e})",
            grad_norm,
        )
    w = res.x[:n_items].copy()
    b = float(res.x[n_items])
    return LinearModel(w, b, float(C), KIND_CLASSIFIER)


def decision_margins(model: LinearModel, m: FootprintMatrix) -> np.ndarray:
    """w.x + b per user; items outside the model vocabulary contribute 0."""
    return _kernels.row_margins(m.indptr, m.indices, model.weights, model.intercept)


def predict_score(model: LinearModel, row: np.ndarray) -> float:
    """Positive-class probability for one active-item set."""
    if model.kind != KIND_CLASSIFIER:
        raise ValueError("predict_score requires a binary classifier")
    row = np.asarray(row, dtype=np.int64)
    valid = row[row < model.n_items]
    margin = float(model.weights[valid].sum()) + model.intercept
    return float(expit(margin))


def predict_scores(model: LinearModel, m: FootprintMatrix) -> np.ndarray:
    """Positive-class probability per user."""
    if model.kind != KIND_CLASSIFIER:
        raise ValueError("predict_scores requires a binary classifier")
    return expit(decision_margins(model, m))


def predict_values(model: LinearModel, m: FootprintMatrix) -> np.ndarray:
    """Linear predictions per user (for regressors)."""
    return decision_margins(model, m)


def grid_search_cv(
    m: FootprintMatrix,
    y01: np.ndarray,
    grid=DEFAULT_C_GRID,
    folds: int = 3,
    seed: int = 0,
) -> float:
    """Pick C by k-fold cross-validated AUC; ties go to the smallest C.

    Folds are deterministic given the seed. A fold whose validation part
    has a single class, or whose training part cannot be fit, is skipped
    for that candidate; a candidate with no usable folds is skipped.
    """
    y01 = np.asarray(y01, dtype=np.float64)
    n = m.n_users
    if n < folds:
        raise ValueError("need at least one user per fold")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_idx = np.array_split(perm, folds)
    best_c = None
    best_mean = -np.inf
    for C in sorted(float(c) for c in grid):
        scores = []
        for f in range(folds):
            val = np.sort(fold_idx[f])
            trn = np.sort(np.concatenate([fold_idx[g] for g in range(folds) if g != f]))
            y_trn, y_val = y01[trn], y01[val]
            if np.unique(y_trn).size < 2 or np.unique(y_val).size < 2:
                logger.debug("grid_search_cv: fold %d skipped (single class)", f)
                continue
            try:
                model = train_logreg_l2(m.select_users(trn), y_trn, C)
            except ConvergenceError:
                logger.debug("grid_search_cv: fold %d skipped (no convergence)", f)
                continue
            preds = predict_scores(model, m.select_users(val))
            scores.append(auc(preds, y_val))
        if not scores:
            continue
        mean = float(np.mean(scores))
        if mean > best_mean:
            best_mean = mean
            best_c = C
    if best_c is None:
        raise ValueError("no grid candidate produced a usable fold")
    return best_c


# ---------------------------------------------------------------------------
# thresholds and metrics


def quantile_threshold(
    scores: np.ndarray, q: float = 0.95, source: str = ""
) -> ThresholdSpec:
    """Threshold at the k-th largest score, k = max(1, floor(n * (1 - q)))."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if n == 0:
        raise ValueError("empty score population")
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    k = max(1, int(math.floor(n * (1.0 - q))))
    value = float(np.partition(scores, n - k)[n - k])
    return ThresholdSpec(float(q), value, source)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pos = labels == 1.0
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pearson(pred: np.ndarray, actual: np.ndarray) -> float:
    """Sample Pearson correlation; raises on constant input or length < 2."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if pred.size < 2:
        raise ValueError("pearson needs at least 2 points")
    a = pred - pred.mean()
    b = actual - actual.mean()
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("pearson undefined for constant input")
    return float((a @ b) / (na * nb))


# ---------------------------------------------------------------------------
# ridge regression (continuous traits)


def _centered_gram(Xs):
    """Eigendecomposition of the centered Gram matrix X_c X_c^T."""
    n = Xs.shape[0]
    mu = np.asarray(Xs.mean(axis=0)).ravel()
    K = (Xs @ Xs.T).toarray().astype(np.float64)
    p = np.asarray(Xs @ mu).ravel()
    Kc = K - p[:, None] - p[None, :] + float(mu @ mu)
    lam, Q = np.linalg.eigh(Kc)
    return mu, np.maximum(lam, 0.0), Q


def _ridge_solve(Xs, y, alpha, mu, lam, Q):
    """Dual-form ridge solution with centering; intercept unpenalized."""
    ybar = float(y.mean())
    yc = y - ybar
    beta = Q @ ((Q.T @ yc) / (lam + alpha))
    w = np.asarray(Xs.T @ beta).ravel() - mu * float(beta.sum())
    b = ybar - float(mu @ w)
    return w, b


def train_ridge(
    m: FootprintMatrix,
    y: np.ndarray,
    alpha_grid=DEFAULT_ALPHA_GRID,
    folds: int = 3,
    seed: int = 0,
) -> LinearModel:
    """Fit L2-penalized least squares with the penalty picked by CV Pearson.

    The intercept is unpenalized (data and targets are centered). Ties in
    mean validation correlation go to the smallest alpha. Constant targets
    raise ValueError.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (m.n_users,):
        raise ValueError("targets not aligned with matrix users")
    if np.isnan(y).any():
        raise ValueError("targets contain missing values; select labeled users first")
    if m.n_users < folds + 1:
        raise ValueError("need more users than folds")
    if np.ptp(y) == 0.0:
        raise ValueError("constant target; correlation objective undefined")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(m.n_users)
    fold_idx = np.array_split(perm, folds)
    Xs_full = m.to_scipy()

    fold_cache = []
    for f in range(folds):
        val = np.sort(fold_idx[f])
        trn = np.sort(np.concatenate([fold_idx[g] for g in range(folds) if g != f]))
        Xs_trn = Xs_full[trn]
        mu, lam, Q = _centered_gram(Xs_trn)
        fold_cache.append((trn, val, Xs_trn, mu, lam, Q))

    best_alpha = None
    best_mean = -np.inf
    for alpha in sorted(float(a) for a in alpha_grid):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        corrs = []
        for trn, val, Xs_trn, mu, lam, Q in fold_cache:
            y_trn = y[trn]
            if np.ptp(y_trn) == 0.0:
                continue
            w, b = _ridge_solve(Xs_trn, y_trn, alpha, mu, lam, Q)
            sub = m.select_users(val)
            preds = _kernels.row_margins(sub.indptr, sub.indices, w, b)
            try:
                corrs.append(pearson(preds, y[val]))
            except ValueError:
                logger.debug("train_ridge: fold skipped (undefined correlation)")
                continue
        if not corrs:
            continue
        mean = float(np.mean(corrs))
        if mean > best_mean:
            best_mean = mean
            best_alpha = alpha
    if best_alpha is None:
        raise ValueError("no alpha candidate produced a usable fold")

    mu, lam, Q = _centered_gram(Xs_full)
    w, b = _ridge_solve(Xs_full, y, best_alpha, mu, lam, Q)
    return LinearModel(w, b, best_alpha, KIND_REGRESSOR)


# ---------------------------------------------------------------------------
# serialization


def vocabulary_hash(item_ids) -> str:
    h = sha256()
    for it in item_ids:
        h.update(it.encode())
        h.update(b"\0")
    return h.hexdigest()


def save_model(path, model: LinearModel, item_ids) -> None:
    """Write a model as JSON with a sparse id -> weight map.

    Zero weights are omitted; the vocabulary hash guards against applying
    the model to a mismatched item space.
    """
    if len(item_ids) != model.n_items:
        raise ValueError("item id list does not match model size")
    nz = np.nonzero(model.weights)[0]
    obj = {
        "kind": model.kind,
        "C": model.C,
        "intercept": model.intercept,
        "n_items": model.n_items,
        "weights": {item_ids[j]: float(model.weights[j]) for j in nz},
        "vocabulary_sha256": vocabulary_hash(item_ids),
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_model(path, item_ids) -> LinearModel:
    """Read a model written by save_model; verifies the vocabulary hash."""
    obj = json.loads(Path(path).read_text())
    if obj["vocabulary_sha256"] != vocabulary_hash(item_ids):
        raise ValueError("model vocabulary does not match this item space")
    index = {it: j for j, it in enumerate(item_ids)}
    w = np.zeros(obj["n_items"])
    for it, val in obj["weights"].items():
        w[index[it]] = val
    return LinearModel(w, float(obj["intercept"]), float(obj["C"]), obj["kind"])
