import json
from dataclasses import replace

import numpy as np
import pytest

from dynadv.attack import AttackParams, Strategy, run_attack
from dynadv.data import SyntheticSpec, generate_synthetic, shuffle_split, write_csv
from dynadv.defender import DefenderSpec, build_defender, training_accuracy
from dynadv.harness import (
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    RepetitionRecord,
    aggregate,
    config_from_dict,
    config_to_dict,
    emit_report,
    hidden_retrain_eval,
    load_config,
    load_preset,
    load_report,
    preset_names,
    render_table,
    repetition_seed,
    retrain_ears,
    run_experiment,
)
from dynadv.metrics import evaluate
from dynadv.models import Penalty, RegularizationSpec, train_one_class, train_subspace_ensemble
from dynadv.seeding import derive_seed

SMALL = ExperimentConfig(
    dataset=DatasetSpec(dim=4, n_per_class=60),
    defenders=(DefenderSpec(design="linear_l2", name="lin"), DefenderSpec(k=9, name="ens")),
    strategies=(Strategy.AP, Strategy.AP_HC),
    repetitions=3, master_seed=17)


@pytest.fixture(scope="module")
def small_rows():
    return run_experiment(SMALL)


def test_presets_load():
    names = preset_names()
    assert {"one_vs_two_class_2d", "one_vs_two_class_10d", "robust_ensemble", "hidden_features", "hidden_retrain", "randomized"} <= set(names)
    for name in names:
        cfg = load_preset(name)
        assert cfg.repetitions == 30


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("nope")


def test_config_round_trip():
    for name in preset_names():
        cfg = load_preset(name)
        assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize("raw", [
    {"repetitions": 0},
    {"dataset": {"kind": "parquet"}},
    {"dataset": {"kind": "csv"}},
    {"attack": {"b_explore": 0}},
    {"attack": {"bogus": 1}},
    {"defenders": [{"design": "magic"}]},
    {"strategies": ["AP_XX"]},
    {"metrics": {"theta_margin": 3}},
    {"colour": "red"},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_yaml_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("repetitions: 4\nattack:\n  b_explore: 7\n")
    cfg = load_config(p, {"attack.n_attack": 11, "repetitions": 2})
    assert (cfg.repetitions, cfg.attack.ap.b_explore, cfg.attack.ap.n_attack) == (2, 7, 11)
    p.write_text("- just a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("a: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_repetition_seeds_distinct():
    seeds = [repetition_seed(2018, r) for r in range(1000)]
    assert len(set(seeds)) == 1000
    assert repetition_seed(2018, 3) == derive_seed(2018, 3)


def test_single_repetition_matches_manual_pipeline():
    cfg = replace(SMALL, repetitions=1, defenders=SMALL.defenders[1:], strategies=(Strategy.AP_HC,))
    (row,) = run_experiment(cfg)
    s = repetition_seed(cfg.master_seed, 0)
    data = generate_synthetic(SyntheticSpec(4, 60, seed=derive_seed(s, 0)))
    train, _ = shuffle_split(data, derive_seed(s, 1), 0.7)
    reference = train_subspace_ensemble(train, 50, 0.5, RegularizationSpec(Penalty.L2, 1.0),
                                        seed=derive_seed(s, 3))
    leak_ref = train_one_class(train.legitimate, 0.1, 0.1)
    defender = build_defender(cfg.defenders[0], train, derive_seed(s, 2, 0))
    result = run_attack(defender, Strategy.AP_HC, AttackParams().with_seed(derive_seed(s, 4)))
    rep = evaluate(defender, result, reference, leak_ref, 0.5)
    got = row.records[0].metrics
    assert got["ear"] == rep.ear and got["amd"] == rep.amd and got["data_leak"] == rep.data_leak
    assert got["training_accuracy"] == training_accuracy(defender, train)
    assert row.mean("ear") == rep.ear


def test_rows_and_counts(small_rows):
    assert [(r.defender, r.attack) for r in small_rows] == [
        ("lin", "AP"), ("lin", "AP_HC"), ("ens", "AP"), ("ens", "AP_HC")]
    for r in small_rows:
        assert r.valid and r.completed == r.repetitions == 3
        for m in r.metrics.values():
            assert m.n_defined + m.n_undefined == 3


def test_means_within_range(small_rows):
    for r in small_rows:
        for name, m in r.metrics.items():
            if m.mean is not None:
                vals = [rec.metrics[name] for rec in r.records if rec.metrics[name] is not None]
                assert min(vals) - 1e-12 <= m.mean <= max(vals) + 1e-12
                assert m.mean == pytest.approx(np.mean(vals))


def test_same_seed_byte_identical(tmp_path):
    cfg = replace(SMALL, repetitions=2)
    contents = []
    for _ in range(2):
        emit_report(run_experiment(cfg), tmp_path / "out", cfg)
        contents.append({p.name: p.read_bytes() for p in sorted((tmp_path / "out").iterdir())})
    assert contents[0] == contents[1]


def test_other_seed_differs(small_rows):
    other = run_experiment(replace(SMALL, master_seed=18))
    assert [r.records[0].seed for r in other] != [r.records[0].seed for r in small_rows]
    assert any(a.mean("amd") != b.mean("amd") for a, b in zip(other, small_rows))


def test_parallel_matches_serial(small_rows):
    par = run_experiment(replace(SMALL, jobs=2))
    assert par == small_rows


def test_report_round_trip(tmp_path, small_rows):
    files = emit_report(small_rows, tmp_path / "r", SMALL)
    assert load_report(tmp_path / "r") == small_rows
    doc = json.loads(files["results"].read_text())
    assert doc["config"]["master_seed"] == 17
    n_lines = len(files["repetitions"].read_text().splitlines())
    assert n_lines == sum(len(r.records) for r in small_rows)


def test_one_row_report(tmp_path, small_rows):
    files = emit_report(small_rows[:1], tmp_path / "one")
    table = files["summary"].read_text().splitlines()
    assert len(table) == 3    # header, rule, one row
    assert len(files["repetitions"].read_text().splitlines()) == 3


def test_empty_report_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_unwritable_report(tmp_path, small_rows):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(small_rows, blocker / "sub")


def _rec(r, amd, error=None):
    metrics = {} if error else {"ear": 1.0, "amd": amd}
    return RepetitionRecord("ds", "d", "AP", r, r, metrics, {}, error)


def test_undefined_marked_in_table():
    recs = [_rec(r, None if r < 3 else 0.2) for r in range(30)]
    (row,) = aggregate(recs)
    assert row.metrics["amd"].n_undefined == 3 and row.metrics["amd"].mean == pytest.approx(0.2)
    assert "3/30 undefined" in render_table([row])


def test_all_undefined():
    (row,) = aggregate([_rec(r, None) for r in range(4)])
    assert row.metrics["amd"].mean is None
    assert "4/4 undefined" in render_table([row])


def test_invalid_when_most_repetitions_fail():
    recs = [_rec(r, 0.1, error="boom" if r < 6 else None) for r in range(10)]
    (row,) = aggregate(recs)
    assert not row.valid and row.completed == 4 and row.flags["errors"] == 6
    assert "INVALID" in render_table([row])
    (row,) = aggregate(recs[2:])   # exactly half completed
    assert row.valid


def test_stage_error_aborts_repetition_only():
    bad = DefenderSpec(design="hidden", hide_fraction=1.0, name="bad")
    cfg = replace(SMALL, defenders=(bad, SMALL.defenders[0]), strategies=(Strategy.AP,),
                  repetitions=2)
    bad_row, good_row = run_experiment(cfg)
    assert not bad_row.valid and bad_row.flags["errors"] == 2
    assert all("ValueError" in r.error for r in bad_row.records)
    assert good_row.valid


def test_csv_dataset(tmp_path):
    d = generate_synthetic(SyntheticSpec(dim=3, n_per_class=40, seed=1))
    write_csv(d, tmp_path / "d.csv")
    cfg = replace(SMALL, dataset=DatasetSpec(kind="csv", path=str(tmp_path / "d.csv")),
                  repetitions=2, strategies=(Strategy.AP,))
    rows = run_experiment(cfg)
    assert rows[0].dataset == "d" and all(r.valid for r in rows)
    # the same file is resplit, not regenerated, per repetition
    assert rows[0].records[0].seed != rows[0].records[1].seed


def test_seeded_attacker_reaches_one_class():
    cfg = replace(SMALL, defenders=(DefenderSpec(design="one_class"),), strategies=(Strategy.AP,),
                  attack=AttackParams(replace(AttackParams().ap, n_seed=1)))
    (row,) = run_experiment(cfg)
    assert row.mean("ear") > 0


@pytest.fixture(scope="module")
def split():
    return shuffle_split(generate_synthetic(SyntheticSpec(seed=21)), 0)


def test_retrain_mimicry_limits(split):
    train, _ = split
    spec = DefenderSpec(design="hidden")
    d = build_defender(spec, train, seed=2)
    legit = retrain_ears(d, spec, train, train.legitimate.X, seed=0)
    mal = retrain_ears(d, spec, train, train.malicious.X, seed=0)
    assert legit["available"] >= 0.99 and legit["hidden"] >= 0.99
    assert mal["available"] <= 0.01 and mal["hidden"] <= 0.01


def test_hidden_retrain_eval():
    cfg = replace(load_preset("hidden_retrain"), repetitions=10)
    available, hidden = hidden_retrain_eval(cfg)
    assert available.mean("ear") >= 0.95
    assert hidden.mean("ear") <= 0.85


def test_hidden_retrain_needs_hidden_defender():
    with pytest.raises(ConfigError):
        hidden_retrain_eval(SMALL)
