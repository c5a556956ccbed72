"""Longer-term protection experiments over simulated time.

Time is simulated by dropping a fraction of every user's likes up front
and gradually re-adding them on a fixed schedule. The classifier is
trained once on the reduced training split and never retrained; only the
decision threshold moves, recomputed at each fraction from the uncloaked
training scores. A user counts as protected at fraction f when their
cloaked score is strictly below that fraction's threshold.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._util import derive_seed, map_ordered
from .cloak import (
    STRATEGY_DOMAIN_MF,
    STRATEGY_FG,
    STRATEGY_FG_TOL,
    STRATEGY_MF,
    CloakDirective,
    apply_cloak,
    cloak_cost,
    cloak_fg,
    cloak_mf,
    cloak_tolerance,
)
from .data import (
    DropPlan,
    FootprintMatrix,
    LabelTable,
    apply_drop,
    filter_min_activity,
    make_drop_plan,
    readd,
    split_train_test,
)
from .metafeatures import MetafeatureModel, build_nmf_metafeatures
from .models import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_C_GRID,
    LinearModel,
    ThresholdSpec,
    grid_search_cv,
    predict_score,
    predict_scores,
    quantile_threshold,
    train_logreg_l2,
)

logger = logging.getLogger(__name__)

_STREAM_SPLIT = 1
_STREAM_DROP = 2
_STREAM_CV = 3
_STREAM_NMF = 4

DEFAULT_SCHEDULE = tuple(round(f * 0.1, 1) for f in range(11))


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs shared by the protection and spillover experiments."""

    seed: int = 0
    quantile: float = 0.95
    tolerance_quantile: float = 0.90
    drop_fraction: float = 0.5
    train_frac: float = 0.66
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    k_metafeatures: int = 50
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    folds: int = 3
    min_user: int = 10
    min_item: int = 10
    nmf_max_iters: int = 200
    nmf_tol: float = 1e-4
    jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must be in (0, 1)")
        if not 0.0 < self.tolerance_quantile < 1.0:
            raise ValueError("tolerance_quantile must be in (0, 1)")
        if self.tolerance_quantile > self.quantile:
            raise ValueError("tolerance_quantile must not exceed quantile")
        if not self.schedule:
            raise ValueError("schedule must be non-empty")
        for f in self.schedule:
            if not 0.0 <= f <= 1.0:
                raise ValueError("schedule fractions must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class ProtectionCurve:
    """Protection over simulated time for one task and strategy."""

    task: str
    strategy: str
    fractions: tuple[float, ...]
    protection: tuple[float, ...]
    thresholds: tuple[float, ...]
    population_size: int
    population_user_ids: tuple[str, ...]
    group_curves: dict[str, tuple[float, ...]]
    diagnostics: dict
    quantile: float
    seed: int


@dataclass(frozen=True)
class TradeoffRow:
    """Cost versus protection for one task and strategy."""

    task: str
    strategy: str
    avg_cloak_cost: float
    protection_at_full: float
    population_size: int


@dataclass(frozen=True, eq=False)
class ProtectionContext:
    """Everything shared by strategies for one task: model, thresholds,
    drop plans, target population. Built once, reused across strategies."""

    task: str
    config: ExperimentConfig
    model: LinearModel
    threshold0: ThresholdSpec
    threshold_full: ThresholdSpec
    train_reduced: FootprintMatrix
    train_plan: DropPlan
    test_reduced: FootprintMatrix
    test_full: FootprintMatrix
    test_plan: DropPlan
    train_scores_reduced: np.ndarray
    test_labels: np.ndarray
    population: np.ndarray
    nmf: Optional[MetafeatureModel]
    domain: Optional[MetafeatureModel]
    diagnostics: dict = field(default_factory=dict)


def _task_view(
    matrix: FootprintMatrix, labels: LabelTable, task: str, config: ExperimentConfig
) -> tuple[FootprintMatrix, LabelTable]:
    """Filter inactivity, then keep only users labeled for the task."""
    if task not in labels.values:
        raise ValueError(f"unknown task {task!r}")
    fm = filter_min_activity(matrix, config.min_user, config.min_item)
    keep = np.array([matrix.user_index[u] for u in fm.user_ids], dtype=np.int64)
    flabels = labels.select_users(keep)
    if not flabels.is_binary(task):
        raise ValueError(f"task {task!r} is not binary")
    labeled = np.nonzero(flabels.labeled_mask(task))[0]
    return fm.select_users(labeled), flabels.select_users(labeled)


def build_protection_context(
    task: str,
    matrix: FootprintMatrix,
    labels: LabelTable,
    config: ExperimentConfig,
    need_nmf: bool = True,
    domain: Optional[MetafeatureModel] = None,
) -> ProtectionContext:
    """Run the shared pipeline stages up to the target population.

    Drop half the likes, train once on the reduced training split (C by
    cross-validation), set the reduced and full-data thresholds, and keep
    the test users positive under both: cloaking a user never targeted is
    meaningless, and one never re-identified needs no longer-term story.
    """
    fm, flabels = _task_view(matrix, labels, task, config)
    plan = make_drop_plan(
        fm, config.drop_fraction, derive_seed(config.seed, _STREAM_DROP)
    )
    train, test = split_train_test(
        fm, flabels, config.train_frac, derive_seed(config.seed, _STREAM_SPLIT)
    )
    train_plan = plan.select_users(train.indices)
    test_plan = plan.select_users(test.indices)
    train_reduced = apply_drop(train.matrix, train_plan)
    test_reduced = apply_drop(test.matrix, test_plan)

    y_train = train.labels.values[task]
    best_c = grid_search_cv(
        train_reduced,
        y_train,
        config.c_grid,
        config.folds,
        derive_seed(config.seed, _STREAM_CV),
    )
    model = train_logreg_l2(train_reduced, y_train, best_c)

    train_scores_reduced = predict_scores(model, train_reduced)
    threshold0 = quantile_threshold(
        train_scores_reduced, config.quantile, source="training scores, fraction 0.0"
    )
    test_scores_reduced = predict_scores(model, test_reduced)
    positives0 = test_scores_reduced >= threshold0.value

    threshold_full = quantile_threshold(
        predict_scores(model, train.matrix),
        config.quantile,
        source="training scores, fraction 1.0",
    )
    positives_full = predict_scores(model, test.matrix) >= threshold_full.value
    population = np.nonzero(positives0 & positives_full)[0]
    if len(population) == 0:
        raise ValueError(
            "empty target population: no test user is predicted positive on "
            "both the reduced and the full footprints; use more data or a "
            "lower quantile"
        )

    nmf = None
    if need_nmf:
        nmf = build_nmf_metafeatures(
            train_reduced,
            config.k_metafeatures,
            max_iters=config.nmf_max_iters,
            tol=config.nmf_tol,
            seed=derive_seed(config.seed, _STREAM_NMF),
        )

    diagnostics = {
        "n_filtered_users": fm.n_users,
        "n_train": train.matrix.n_users,
        "n_test": test.matrix.n_users,
        "best_c": best_c,
        "positives_at_zero": int(positives0.sum()),
        "positives_at_full": int(positives_full.sum()),
        "population_size": int(len(population)),
    }
    return ProtectionContext(
        task=task,
        config=config,
        model=model,
        threshold0=threshold0,
        threshold_full=threshold_full,
        train_reduced=train_reduced,
        train_plan=train_plan,
        test_reduced=test_reduced,
        test_full=test.matrix,
        test_plan=test_plan,
        train_scores_reduced=train_scores_reduced,
        test_labels=test.labels.values[task],
        population=population,
        nmf=nmf,
        domain=domain,
        diagnostics=diagnostics,
    )


def _make_directive(
    ctx: ProtectionContext, strategy: str, i: int
) -> Optional[CloakDirective]:
    row = ctx.test_reduced.row(i)
    uid = ctx.test_reduced.user_ids[i]
    th = ctx.threshold0.value
    if strategy == STRATEGY_FG:
        return cloak_fg(ctx.model, row, th, user=uid)
    if strategy == STRATEGY_MF:
        if ctx.nmf is None:
            raise ValueError("context built without NMF metafeatures")
        return cloak_mf(ctx.model, row, th, ctx.nmf, user=uid)
    if strategy == STRATEGY_DOMAIN_MF:
        if ctx.domain is None:
            raise ValueError("DOMAIN_MF requires a domain category mapping")
        return cloak_mf(ctx.model, row, th, ctx.domain, user=uid)
    if strategy == STRATEGY_FG_TOL:
        return cloak_tolerance(
            ctx.model,
            row,
            th,
            ctx.train_scores_reduced,
            ctx.config.tolerance_quantile,
            user=uid,
        )
    raise ValueError(f"unknown strategy {strategy!r}")


def _strategy_mfm(ctx: ProtectionContext, strategy: str) -> Optional[MetafeatureModel]:
    if strategy == STRATEGY_MF:
        return ctx.nmf
    if strategy == STRATEGY_DOMAIN_MF:
        return ctx.domain
    return None


def run_strategy(
    ctx: ProtectionContext, strategy: str
) -> tuple[ProtectionCurve, float]:
    """Protection curve plus the average cloaking cost on full rows."""
    config = ctx.config
    mfm = _strategy_mfm(ctx, strategy)

    directives: dict[int, CloakDirective] = {}
    not_found = 0
    for i in ctx.population:
        d = _make_directive(ctx, strategy, int(i))
        if d is None:
            not_found += 1
        else:
            directives[int(i)] = d
    pop = np.array(sorted(directives), dtype=np.int64)

    y = ctx.test_labels
    groups = {
        "tp": np.array([i for i in pop if y[i] == 1.0], dtype=np.int64),
        "fp": np.array([i for i in pop if y[i] == 0.0], dtype=np.int64),
    }
    for name, members in groups.items():
        if len(members) == 0:
            logger.debug("run_strategy: group %s empty for %s", name, ctx.task)

    def protection_at(fraction: float):
        m_train_f = readd(ctx.train_reduced, ctx.train_plan, fraction)
        th_f = quantile_threshold(
            predict_scores(ctx.model, m_train_f),
            config.quantile,
            source=f"training scores, fraction {fraction}",
        ).value
        m_test_f = readd(ctx.test_reduced, ctx.test_plan, fraction)
        protected = {}
        for i in pop:
            kept = apply_cloak(m_test_f.row(i), directives[int(i)], mfm)
            protected[int(i)] = predict_score(ctx.model, kept) < th_f
        return th_f, protected

    results = map_ordered(protection_at, list(config.schedule), config.jobs)

    def rate(protected: dict, members: np.ndarray) -> float:
        return float(np.mean([protected[int(i)] for i in members])) if len(members) else float("nan")

    protection = tuple(
        rate(protected, pop) if len(pop) else float("nan")
        for _, protected in results
    )
    thresholds = tuple(th for th, _ in results)
    group_curves = {
        name: tuple(rate(protected, members) for _, protected in results)
        for name, members in groups.items()
        if len(members)
    }
    costs = [
        cloak_cost(ctx.test_full.row(int(i)), directives[int(i)], mfm) for i in pop
    ]
    avg_cost = float(np.mean(costs)) if costs else float("nan")

    diagnostics = dict(ctx.diagnostics)
    diagnostics.update(
        {
            "not_found": not_found,
            "n_cloaked": int(len(pop)),
            "tp_count": int(len(groups["tp"])),
            "fp_count": int(len(groups["fp"])),
            "unprotected_at_creation": int(
                sum(1 for i in pop if not results[_zero_index(config.schedule)][1][int(i)])
            )
            if 0.0 in config.schedule
            else -1,
            "avg_cloak_cost_full": avg_cost,
        }
    )
    curve = ProtectionCurve(
        task=ctx.task,
        strategy=strategy,
        fractions=tuple(float(f) for f in config.schedule),
        protection=protection,
        thresholds=thresholds,
        population_size=int(len(pop)),
        population_user_ids=tuple(ctx.test_reduced.user_ids[i] for i in pop),
        group_curves=group_curves,
        diagnostics=diagnostics,
        quantile=config.quantile,
        seed=config.seed,
    )
    return curve, avg_cost


def _zero_index(schedule: Sequence[float]) -> int:
    return list(schedule).index(0.0)


def run_protection_experiment(
    task: str,
    strategy: str,
    matrix: FootprintMatrix,
    labels: LabelTable,
    config: ExperimentConfig,
    domain: Optional[MetafeatureModel] = None,
) -> ProtectionCurve:
    """End-to-end protection experiment for one task and strategy."""
    ctx = build_protection_context(
        task, matrix, labels, config, need_nmf=(strategy == STRATEGY_MF), domain=domain
    )
    curve, _ = run_strategy(ctx, strategy)
    return curve


def tp_fp_breakdown(curve: ProtectionCurve) -> dict[str, float]:
    """Protection at full re-add, split by ground-truth label."""
    if 1.0 not in curve.fractions:
        raise ValueError("schedule does not include fraction 1.0")
    idx = curve.fractions.index(1.0)
    return {name: vals[idx] for name, vals in curve.group_curves.items()}


def tradeoff_report(
    tasks: Sequence[str],
    strategies: Sequence[str],
    matrix: FootprintMatrix,
    labels: LabelTable,
    config: ExperimentConfig,
    domain: Optional[MetafeatureModel] = None,
) -> list[TradeoffRow]:
    """Cost versus protection-at-full for every task x strategy pair.

    The model, thresholds and population are shared per task, so rows for
    different strategies are directly comparable.
    """
    if 1.0 not in config.schedule:
        raise ValueError("tradeoff report needs fraction 1.0 in the schedule")
    rows = []
    for task in tasks:
        need_nmf = STRATEGY_MF in strategies
        ctx = build_protection_context(
            task, matrix, labels, config, need_nmf=need_nmf, domain=domain
        )
        for strategy in strategies:
            curve, cost = run_strategy(ctx, strategy)
            idx = curve.fractions.index(1.0)
            rows.append(
                TradeoffRow(
                    task=task,
                    strategy=strategy,
                    avg_cloak_cost=cost,
                    protection_at_full=curve.protection[idx],
                    population_size=curve.population_size,
                )
            )
    return rows


# ---------------------------------------------------------------------------
# serialization


def curve_to_dict(curve: ProtectionCurve, meta: Optional[dict] = None) -> dict:
    obj = {
        "task": curve.task,
        "strategy": curve.strategy,
        "quantile": curve.quantile,
        "seed": curve.seed,
        "population_size": curve.population_size,
        "population_user_ids": list(curve.population_user_ids),
        "fractions": list(curve.fractions),
        "protection": list(curve.protection),
        "thresholds": list(curve.thresholds),
        "group_curves": {k: list(v) for k, v in curve.group_curves.items()},
        "diagnostics": curve.diagnostics,
    }
    if meta:
        obj.update(meta)
    return obj


def save_protection_curve(path, curve: ProtectionCurve, meta: Optional[dict] = None):
    Path(path).write_text(
        json.dumps(curve_to_dict(curve, meta), indent=2, sort_keys=True) + "\n"
    )


def save_protection_curve_csv(path, curve: ProtectionCurve):
    """CSV mirror: fraction, protection, group (group 'all' plus tp/fp)."""
    lines = ["fraction,protection,group"]
    for name, vals in [("all", curve.protection)] + sorted(curve.group_curves.items()):
        for f, v in zip(curve.fractions, vals):
            lines.append(f"{f!r},{v!r},{name}")
    Path(path).write_text("\n".join(lines) + "\n")
