import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ConstantDefender, constant_ensemble, threshold_ensemble
from dynadv.attack import (
    APParams,
    AttackParams,
    AttackResult,
    AttackSet,
    ExplorationSet,
    Strategy,
    run_attack,
)
from dynadv.defender import DefenderSpec, DeterministicDefender, build_defender
from dynadv.metrics import (
    AMDParams,
    adversarial_margin_density,
    data_leakage,
    effective_attack_rate,
    evaluate,
    margin_indicator,
    successful_attacks,
)
from dynadv.models import LinearModel, train_one_class

ACCEPT = ConstantDefender(1, True)
REJECT = ConstantDefender(1, False)
TEN = threshold_ensemble(np.arange(10) / 10 + 0.05)   # p(Leg | x) = round-down of x to tenths


def test_ear_constant_defenders():
    X = np.random.default_rng(0).random((30, 1))
    assert effective_attack_rate(ACCEPT, X) == 1.0
    assert effective_attack_rate(REJECT, X) == 0.0


def test_empty_attack_set_rejected():
    with pytest.raises(ValueError):
        effective_attack_rate(ACCEPT, np.empty((0, 1)))


def test_amd_hand_example():
    X = np.array([[0.3], [0.9], [0.6]])
    np.testing.assert_allclose(TEN.confidence(X), [0.3, 0.9, 0.6])
    assert margin_indicator(TEN, X, 0.5).tolist() == [True, False, True]
    assert adversarial_margin_density(TEN, ACCEPT, X, 0.5) == pytest.approx(2 / 3)


def test_amd_theta_one_is_one():
    X = np.random.default_rng(1).random((25, 1))
    assert adversarial_margin_density(TEN, ACCEPT, X, 1.0) == 1.0


def test_amd_unanimous_reference_is_zero():
    e = constant_ensemble(50, 50, dim=1)
    assert adversarial_margin_density(e, ACCEPT, np.random.default_rng(2).random((9, 1))) == 0.0


def test_amd_theta_zero_counts_exact_ties():
    X = np.array([[0.5], [0.55], [0.49], [0.7]])
    # votes: 5, 5, 4, 7 of 10
    assert adversarial_margin_density(TEN, ACCEPT, X, 0.0) == 0.5


def test_undefined_when_nothing_succeeds():
    X = np.random.default_rng(3).random((5, 1))
    assert adversarial_margin_density(TEN, REJECT, X) is None
    oc = train_one_class(_legit(), 0.1, 0.1)
    assert data_leakage(oc, ConstantDefender(2, False), np.zeros((3, 2))) is None


def _legit():
    from dynadv.data import SyntheticSpec, generate_synthetic
    return generate_synthetic(SyntheticSpec(dim=2, seed=8)).legitimate


def test_leak_on_training_data_is_one_minus_nu():
    legit = _legit()
    oc = train_one_class(legit, 0.1, 0.1)
    leak = data_leakage(oc, ConstantDefender(2, True), legit.X)
    assert leak == pytest.approx(1 - np.floor(0.1 * len(legit)) / len(legit))


def test_leak_at_malicious_mean_is_zero():
    oc = train_one_class(_legit(), 0.1, 0.1)
    assert data_leakage(oc, ConstantDefender(2, True), np.full((10, 2), 0.25)) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1),
       st.floats(-1, 1))
def test_amd_bounded_and_monotone(xs, a, b, cut):
    X = np.array(xs)[:, None]
    defender = DeterministicDefender(LinearModel(np.array([1.0]), -cut))
    lo, hi = sorted((a, b))
    amd_lo = adversarial_margin_density(TEN, defender, X, lo)
    amd_hi = adversarial_margin_density(TEN, defender, X, hi)
    ear = effective_attack_rate(defender, X)
    assert 0.0 <= ear <= 1.0
    if ear == 0:
        assert amd_lo is None and amd_hi is None
    else:
        assert 0.0 <= amd_lo <= amd_hi <= 1.0
        assert adversarial_margin_density(TEN, defender, X, 1.0) == 1.0


def _result(X):
    ex = ExplorationSet(X[:1], np.ones((1, 1), bool), np.array([0]), 7)
    return AttackResult(Strategy.AP, ex, AttackSet(X, np.zeros((len(X), 2), int)))


def test_evaluate_shares_success_mask():
    rng = np.random.default_rng(4)
    X = rng.random((200, 1))
    defender = DeterministicDefender(LinearModel(np.array([1.0]), -0.4))
    oc = train_one_class(_legit().project([0]), 0.1, 0.1)
    rep = evaluate(defender, _result(X), TEN, oc, 0.5)
    hit = successful_attacks(defender, X)
    assert rep.n_successful == hit.sum() and rep.ear == hit.mean()
    assert rep.amd == pytest.approx(margin_indicator(TEN, X[hit], 0.5).mean())
    assert rep.data_leak == pytest.approx(oc.decide(X[hit]).mean())
    assert rep.probes_spent == 7 and rep.n_attack == 200


def test_evaluate_failed_attack():
    result = run_attack(ConstantDefender(1, False), Strategy.AP, AttackParams(APParams(b_explore=1)))
    rep = evaluate(ConstantDefender(1, False), result, TEN)
    assert (rep.ear, rep.amd, rep.data_leak, rep.n_attack) == (0.0, None, None, 0)


def test_randomized_success_uses_majority_rule(split10):
    d = build_defender(DefenderSpec(design="randomized"), split10[0], seed=0)
    X = np.random.default_rng(5).random((300, 10))
    # repeated scoring never consults the feedback stream
    first = successful_attacks(d, X)
    np.testing.assert_array_equal(first, successful_attacks(d, X))
    np.testing.assert_array_equal(first, d.ensemble.decide(X))
    assert d.probe_count == 0


def test_amd_params_validation():
    with pytest.raises(ValueError):
        AMDParams(theta_margin=2.0)
