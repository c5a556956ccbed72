import dataclasses
import json
import logging

import numpy as np
import pytest

from footcloak.simulate import ExperimentConfig
from footcloak.spillover import (
    POPULATION_ALL_TEST,
    POPULATION_CLOAKED,
    run_spillover_experiment,
    report_to_dict,
    save_spillover_csv,
    save_spillover_report,
)

_CONFIG = ExperimentConfig(
    seed=6,
    quantile=0.90,
    k_metafeatures=12,
    nmf_max_iters=150,
)

_TRAITS = ["trait_a", "trait_b"]


@pytest.fixture(scope="module")
def report(small_synth):
    res = small_synth
    return run_spillover_experiment(
        "task_a", _TRAITS, res.matrix, res.labels, _CONFIG
    )


def test_report_shape(report):
    assert report.sensitive_task == "task_a"
    assert report.population_mode == POPULATION_CLOAKED
    assert [r.trait for r in report.rows] == _TRAITS
    for r in report.rows:
        assert r.n == report.n_population
        for v in (r.r_none, r.r_fg, r.r_mf):
            assert -1.0 <= v <= 1.0


def test_small_population_flagged(report, small_synth, caplog):
    # the 350-user fixture yields a small cloaked population by design
    if report.n_population < 30:
        assert report.small_population
    res = small_synth
    with caplog.at_level(logging.WARNING, logger="footcloak.spillover"):
        rep = run_spillover_experiment(
            "task_a", ["trait_a"], res.matrix, res.labels, _CONFIG
        )
    if rep.small_population:
        assert any("population" in r.message for r in caplog.records)


def test_mf_disrupts_more_than_fg(report):
    # MF removes a superset of FG per user, so on average it moves the
    # secondary predictions at least as much
    drop_fg = np.mean([abs(r.r_none - r.r_fg) for r in report.rows])
    drop_mf = np.mean([abs(r.r_none - r.r_mf) for r in report.rows])
    assert drop_mf >= drop_fg - 0.05


def test_all_test_population(small_synth):
    res = small_synth
    rep = run_spillover_experiment(
        "task_a",
        ["trait_a"],
        res.matrix,
        res.labels,
        _CONFIG,
        population=POPULATION_ALL_TEST,
    )
    assert rep.population_mode == POPULATION_ALL_TEST
    assert rep.n_population == rep.diagnostics["n_test"]
    assert rep.n_population > rep.diagnostics["n_cloaked"]
    # uncloaked users dominate, so the three columns stay close together
    row = rep.rows[0]
    assert abs(row.r_none - row.r_fg) <= abs(row.r_none) + 1e-9


def test_deterministic(small_synth, report):
    res = small_synth
    rep2 = run_spillover_experiment(
        "task_a", _TRAITS, res.matrix, res.labels, _CONFIG
    )
    for a, b in zip(report.rows, rep2.rows):
        assert a == b


def test_unknown_population_mode(small_synth):
    res = small_synth
    with pytest.raises(ValueError, match="population mode"):
        run_spillover_experiment(
            "task_a", ["trait_a"], res.matrix, res.labels, _CONFIG, population="bogus"
        )


def test_unknown_task_and_trait(small_synth):
    res = small_synth
    with pytest.raises(ValueError, match="unknown task"):
        run_spillover_experiment("nope", ["trait_a"], res.matrix, res.labels, _CONFIG)
    with pytest.raises(ValueError, match="unknown trait"):
        run_spillover_experiment("task_a", ["nope"], res.matrix, res.labels, _CONFIG)


def test_population_too_small_errors(small_synth):
    # an absurd quantile leaves at most 1-2 positive test users
    res = small_synth
    cfg = dataclasses.replace(_CONFIG, quantile=0.999)
    with pytest.raises(ValueError, match="population"):
        run_spillover_experiment(
            "task_a", ["trait_a"], res.matrix, res.labels, cfg
        )


def test_report_serialization(report, tmp_path):
    obj = report_to_dict(report, meta={"config_hash": "x", "seed": 6})
    assert obj["config_hash"] == "x"
    assert len(obj["rows"]) == 2
    assert set(obj["rows"][0]) == {
        "trait",
        "n",
        "pearson_none",
        "pearson_fg",
        "pearson_mf",
    }
    jpath = tmp_path / "spill.json"
    save_spillover_report(jpath, report)
    loaded = json.loads(jpath.read_text())
    assert loaded["rows"] == report_to_dict(report)["rows"]

    cpath = tmp_path / "spill.csv"
    save_spillover_csv(cpath, report)
    lines = cpath.read_text().splitlines()
    assert lines[0] == "trait,strategy,pearson_r,n"
    assert len(lines) == 1 + 3 * len(report.rows)
    trait, strategy, val, n = lines[1].split(",")
    assert trait == "trait_a" and strategy == "none"
    assert float(val) == report.rows[0].r_none
    assert int(n) == report.rows[0].n
