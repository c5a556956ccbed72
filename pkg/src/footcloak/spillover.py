"""Spillover: what cloaking one sensitive inference costs other tasks.

Users cloak against a sensitive classifier; secondary continuous traits
are then predicted from their cloaked footprints with ridge models that
were trained on uncloaked data. The report compares Pearson correlation
on the cloaked subpopulation under no cloaking, FG cloaking, and MF
cloaking, using the same user set and the same secondary models in all
three columns.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._util import derive_seed
from .cloak import CloakDirective, apply_cloak, cloak_fg, cloak_mf
from .data import FootprintMatrix, LabelTable, filter_min_activity, split_train_test
from .metafeatures import MetafeatureModel, build_nmf_metafeatures
from .models import (
    LinearModel,
    grid_search_cv,
    pearson,
    predict_score,
    predict_scores,
    quantile_threshold,
    train_logreg_l2,
    train_ridge,
)
from .simulate import ExperimentConfig

logger = logging.getLogger(__name__)

_STREAM_SPLIT = 21
_STREAM_CV = 22
_STREAM_NMF = 23
_STREAM_RIDGE = 24

POPULATION_CLOAKED = "cloaked"
POPULATION_ALL_TEST = "all-test"

SMALL_POPULATION = 30
MIN_POPULATION = 3


@dataclass(frozen=True)
class SpilloverRow:
    """Correlation for one secondary trait under the three footprint states."""

    trait: str
    n: int
    r_none: float
    r_fg: float
    r_mf: float


@dataclass(frozen=True, eq=False)
class SpilloverReport:
    sensitive_task: str
    population_mode: str
    n_population: int
    small_population: bool
    rows: tuple[SpilloverRow, ...]
    diagnostics: dict
    quantile: float
    seed: int


def run_spillover_experiment(
    sensitive_task: str,
    traits: Sequence[str],
    matrix: FootprintMatrix,
    labels: LabelTable,
    config: ExperimentConfig,
    population: str = POPULATION_CLOAKED,
) -> SpilloverReport:
    """Measure secondary-trait correlation before and after cloaking.

    The sensitive classifier is trained on the full training split, its
    threshold set at the training-score quantile; positive test users get
    FG and MF directives. Secondary ridge models are trained per trait on
    uncloaked training rows only. population='cloaked' evaluates over the
    cloaked users; 'all-test' evaluates over every test user, with
    directives applied where they exist.
    """
    if population not in (POPULATION_CLOAKED, POPULATION_ALL_TEST):
        raise ValueError(f"unknown population mode {population!r}")

    if sensitive_task not in labels.values:
        raise ValueError(f"unknown task {sensitive_task!r}")
    fm = filter_min_activity(matrix, config.min_user, config.min_item)
    keep = np.array([matrix.user_index[u] for u in fm.user_ids], dtype=np.int64)
    flabels = labels.select_users(keep)
    if not flabels.is_binary(sensitive_task):
        raise ValueError(f"task {sensitive_task!r} is not binary")
    labeled = np.nonzero(flabels.labeled_mask(sensitive_task))[0]
    fm = fm.select_users(labeled)
    flabels = flabels.select_users(labeled)

    train, test = split_train_test(
        fm, flabels, config.train_frac, derive_seed(config.seed, _STREAM_SPLIT)
    )
    y_train = train.labels.values[sensitive_task]
    best_c = grid_search_cv(
        train.matrix,
        y_train,
        config.c_grid,
        config.folds,
        derive_seed(config.seed, _STREAM_CV),
    )
    model = train_logreg_l2(train.matrix, y_train, best_c)
    threshold = quantile_threshold(
        predict_scores(model, train.matrix), config.quantile, source="training scores"
    )
    test_scores = predict_scores(model, test.matrix)
    positives = np.nonzero(test_scores >= threshold.value)[0]

    mfm = build_nmf_metafeatures(
        train.matrix,
        config.k_metafeatures,
        max_iters=config.nmf_max_iters,
        tol=config.nmf_tol,
        seed=derive_seed(config.seed, _STREAM_NMF),
    )

    fg: dict[int, CloakDirective] = {}
    mf: dict[int, CloakDirective] = {}
    not_found = 0
    for i in positives:
        i = int(i)
        row = test.matrix.row(i)
        uid = test.matrix.user_ids[i]
        d_fg = cloak_fg(model, row, threshold.value, user=uid)
        if d_fg is None:
            not_found += 1
            continue
        fg[i] = d_fg
        mf[i] = cloak_mf(model, row, threshold.value, mfm, user=uid)

    cloaked = np.array(sorted(fg), dtype=np.int64)
    if population == POPULATION_CLOAKED:
        pop = cloaked
    else:
        pop = np.arange(test.matrix.n_users, dtype=np.int64)
    if len(pop) < MIN_POPULATION:
        raise ValueError(
            f"population has {len(pop)} users; need at least {MIN_POPULATION}"
        )
    small = len(pop) < SMALL_POPULATION
    if small:
        logger.warning("spillover population has only %d users", len(pop))

    def trait_row(trait: str) -> SpilloverRow:
        if trait not in labels.values:
            raise ValueError(f"unknown trait {trait!r}")
        trn_mask = train.labels.labeled_mask(trait)
        trn_idx = np.nonzero(trn_mask)[0]
        ridge = train_ridge(
            train.matrix.select_users(trn_idx),
            train.labels.values[trait][trn_idx],
            config.alpha_grid,
            config.folds,
            derive_seed(config.seed, _STREAM_RIDGE),
        )
        eval_idx = np.array(
            [i for i in pop if not np.isnan(test.labels.values[trait][i])],
            dtype=np.int64,
        )
        if len(eval_idx) < MIN_POPULATION:
            raise ValueError(
                f"trait {trait!r}: only {len(eval_idx)} labeled users in population"
            )
        actual = test.labels.values[trait][eval_idx]

        def predict_with(directives: Optional[dict]) -> np.ndarray:
            preds = np.empty(len(eval_idx))
            for pos, i in enumerate(eval_idx):
                row = test.matrix.row(int(i))
                if directives is not None and int(i) in directives:
                    row = apply_cloak(row, directives[int(i)], mfm)
                valid = row[row < ridge.n_items]
                preds[pos] = float(ridge.weights[valid].sum()) + ridge.intercept
            return preds

        return SpilloverRow(
            trait=trait,
            n=int(len(eval_idx)),
            r_none=pearson(predict_with(None), actual),
            r_fg=pearson(predict_with(fg), actual),
            r_mf=pearson(predict_with(mf), actual),
        )

    rows = tuple(trait_row(t) for t in traits)
    diagnostics = {
        "n_train": train.matrix.n_users,
        "n_test": test.matrix.n_users,
        "best_c": best_c,
        "threshold": threshold.value,
        "n_positive": int(len(positives)),
        "n_cloaked": int(len(cloaked)),
        "not_found": not_found,
    }
    return SpilloverReport(
        sensitive_task=sensitive_task,
        population_mode=population,
        n_population=int(len(pop)),
        small_population=small,
        rows=rows,
        diagnostics=diagnostics,
        quantile=config.quantile,
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: SpilloverReport, meta: Optional[dict] = None) -> dict:
    obj = {
        "sensitive_task": report.sensitive_task,
        "population_mode": report.population_mode,
        "n_population": report.n_population,
        "small_population": report.small_population,
        "quantile": report.quantile,
        "seed": report.seed,
        "rows": [
            {
                "trait": r.trait,
                "n": r.n,
                "pearson_none": r.r_none,
                "pearson_fg": r.r_fg,
                "pearson_mf": r.r_mf,
            }
            for r in report.rows
        ],
        "diagnostics": report.diagnostics,
    }
    if meta:
        obj.update(meta)
    return obj


def save_spillover_report(path, report: SpilloverReport, meta: Optional[dict] = None):
    Path(path).write_text(
        json.dumps(report_to_dict(report, meta), indent=2, sort_keys=True) + "\n"
    )


def save_spillover_csv(path, report: SpilloverReport):
    """CSV mirror: trait, strategy, pearson_r, n."""
    lines = ["trait,strategy,pearson_r,n"]
    for r in report.rows:
        for strategy, val in (("none", r.r_none), ("fg", r.r_fg), ("mf", r.r_mf)):
            lines.append(f"{r.trait},{strategy},{val!r},{r.n}")
    Path(path).write_text("\n".join(lines) + "\n")
