"""Metafeatures: NMF item groupings and domain category mappings.

Items are grouped into k metafeatures either by non-negative matrix
factorization of the training footprint (X ~ W H, Frobenius objective,
multiplicative updates) or by an externally supplied item -> category
mapping. Each item gets exactly one metafeature: the argmax of its H
column, ties to the lowest metafeature index.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .data import FootprintMatrix

logger = logging.getLogger(__name__)

SOURCE_NMF = "nmf"
SOURCE_DOMAIN = "domain"

_EPS = 1e-12

_CATEGORY_HEADERS = {("item_id", "category"), ("item", "category")}


@dataclass(frozen=True, eq=False)
class MetafeatureModel:
    """Exclusive item -> metafeature assignment plus the loading matrix.

    k counts all metafeature ids, H is (k, n_items). For domain mappings
    H is a 0/1 indicator and the last id is the reserved uncategorized
    group (stored in .reserved); reserved is None for NMF groupings.
    zero_loading flags items whose entire H column is zero (their argmax
    assignment carries no evidence).
    """

    k: int
    H: np.ndarray
    assignment: np.ndarray
    source: str
    labels: tuple[str, ...] | None = None
    reserved: int | None = None
    zero_loading: np.ndarray | None = None

    @property
    def n_items(self) -> int:
        return self.H.shape[1]

    def members(self, mf: int) -> np.ndarray:
        """Item indices assigned to metafeature mf."""
        return np.nonzero(self.assignment == mf)[0]


# ---------------------------------------------------------------------------
# NMF


def _nmf_objective(nnz: float, W, H, XHt) -> float:
    # ||X - WH||_F^2 for binary X, via ||X||^2 - 2<X, WH> + ||WH||^2;
    # <X, WH> = sum(W * XH^T) and ||WH||^2 = <W^T W, H H^T>
    cross = float(np.sum(W * XHt))
    wtw = W.T @ W
    hht = H @ H.T
    return nnz - 2.0 * cross + float(np.sum(wtw * hht))


def nmf_fit(
    X: FootprintMatrix,
    k: int,
    max_iters: int = 200,
    tol: float = 1e-4,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factor a binary footprint as X ~ W H with multiplicative updates.

    W is (n_users, k), H is (k, n_items), both non-negative, initialized
    from seeded uniform(0, 1). Iteration stops at max_iters or when the
    relative objective decrease falls below tol. Returns (W, H, objectives)
    where objectives[t] is the Frobenius objective after iteration t; the
    sequence is non-increasing.
    """
    n, m = X.n_users, X.n_items
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > min(n, m):
        raise ValueError(f"k={k} exceeds min(n_users, n_items)={min(n, m)}")
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.0, 1.0, size=(n, k))
    H = rng.uniform(0.0, 1.0, size=(k, m))
    nnz = float(X.nnz)

    objectives = []
    prev = None
    for _ in range(max_iters):
        # W <- W * (X H^T) / (W (H H^T))
        XHt = _kernels.row_component_sums(X.indptr, X.indices, H)
        denom = W @ (H @ H.T)
        W = W * (XHt / np.maximum(denom, _EPS))
        # H <- H * (W^T X) / ((W^T W) H)
        WtX = _kernels.component_col_sums(X.indptr, X.indices, W, m)
        denom = (W.T @ W) @ H
        H = H * (WtX / np.maximum(denom, _EPS))

        XHt = _kernels.row_component_sums(X.indptr, X.indices, H)
        obj = _nmf_objective(nnz, W, H, XHt)
        objectives.append(obj)
        if prev is not None and prev > 0 and (prev - obj) / prev < tol:
            break
        prev = obj
    return W, H, np.array(objectives)


def assign_exclusive(H: np.ndarray) -> np.ndarray:
    """Assign each item to the metafeature with the largest loading.

    Ties break to the lowest metafeature index. Items with an all-zero
    column land on metafeature 0; flag them via zero_loading_items.
    """
    return np.argmax(H, axis=0).astype(np.int64)


def zero_loading_items(H: np.ndarray) -> np.ndarray:
    """Boolean mask of items whose entire loading column is zero."""
    return ~np.any(H > 0.0, axis=0)


def build_nmf_metafeatures(
    X: FootprintMatrix,
    k: int,
    max_iters: int = 200,
    tol: float = 1e-4,
    seed: int = 0,
) -> MetafeatureModel:
    """Fit NMF on the training footprint and wrap the exclusive assignment."""
    _, H, _ = nmf_fit(X, k, max_iters=max_iters, tol=tol, seed=seed)
    zero = zero_loading_items(H)
    if zero.any():
        logger.debug("build_nmf_metafeatures: %d zero-loading items", int(zero.sum()))
    return MetafeatureModel(
        k=k,
        H=H,
        assignment=assign_exclusive(H),
        source=SOURCE_NMF,
        zero_loading=zero,
    )


# ---------------------------------------------------------------------------
# domain categories


def load_domain_categories(path, item_ids) -> MetafeatureModel:
    """Build a metafeature model from an item_id,category CSV mapping.

    Categories take ids in first-seen order; items absent from the file
    go to a reserved trailing 'uncategorized' metafeature that cloaking
    never sweeps. Items in the file but not in the item space are
    ignored. Malformed rows raise ValueError with the line number.
    """
    item_index = {it: j for j, it in enumerate(item_ids)}
    n_items = len(item_ids)
    text = Path(path).read_text()
    lines = text.splitlines()
    delim = "\t" if lines and "\t" in lines[0] else ","
    cat_index: dict[str, int] = {}
    item_cat = np.full(n_items, -1, dtype=np.int64)
    body = []
    for ln, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        fields = [f.strip() for f in next(csv.reader([raw], delimiter=delim))]
        body.append((ln, fields))
    if body:
        first = tuple(f.lower() for f in body[0][1])
        if first in _CATEGORY_HEADERS:
            body = body[1:]
    unknown = 0
    for ln, fields in body:
        if len(fields) != 2 or not all(fields):
            raise ValueError(f"line {ln}: expected 2 fields 'item_id,category'")
        iid, cat = fields
        j = item_index.get(iid)
        if j is None:
            unknown += 1
            continue
        if cat not in cat_index:
            cat_index[cat] = len(cat_index)
        item_cat[j] = cat_index[cat]
    if unknown:
        logger.debug("load_domain_categories: %d rows for unknown items", unknown)
    n_cat = len(cat_index)
    reserved = n_cat
    item_cat[item_cat < 0] = reserved
    k = n_cat + 1
    H = np.zeros((k, n_items))
    H[item_cat, np.arange(n_items)] = 1.0
    labels = tuple(cat_index) + ("uncategorized",)
    return MetafeatureModel(
        k=k,
        H=H,
        assignment=item_cat,
        source=SOURCE_DOMAIN,
        labels=labels,
        reserved=reserved,
        zero_loading=np.zeros(n_items, dtype=bool),
    )


# ---------------------------------------------------------------------------
# reporting


def top_items(mfm: MetafeatureModel, item_ids, top_n: int = 10) -> dict:
    """Per metafeature: the top-loading assigned items with their weights.

    Within a metafeature, its assigned items are ranked by H loading
    (descending, ties to the lower item index).
    """
    report = {}
    for mf in range(mfm.k):
        members = mfm.members(mf)
        loads = mfm.H[mf, members]
        order = np.lexsort((members, -loads))[:top_n]
        label = mfm.labels[mf] if mfm.labels else str(mf)
        report[str(mf)] = {
            "label": label,
            "size": int(len(members)),
            "top_items": [
                {"item_id": item_ids[members[o]], "weight": float(loads[o])}
                for o in order
            ],
        }
    return report


def save_metafeature_report(path, mfm: MetafeatureModel, item_ids, top_n: int = 10):
    obj = {
        "source": mfm.source,
        "k": mfm.k,
        "reserved": mfm.reserved,
        "metafeatures": top_items(mfm, item_ids, top_n),
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
