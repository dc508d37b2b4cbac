"""Game-theoretic harness: strategies, resilience, and protocol checks."""

import pytest

from distauction.core import ABORT, outcome_bytes
from distauction.fixedpoint import ZERO
from distauction.gametheory import (
    STRATEGY_LIBRARY,
    CoinConstantStrategy,
    CorruptTaskStrategy,
    EquivocateStrategy,
    IdentityStrategy,
    OutputFlipStrategy,
    WithholdAllStrategy,
    check_abort_safety,
    check_bid_agreement_validity,
    check_bidder_truthfulness,
    check_coin_abort_contract,
    check_coin_deviation,
    check_coin_uniformity,
    check_correct_simulation,
    check_inconsistent_bidder_unanimity,
    check_k_resilience,
    check_transfer_abort_contract,
    global_outcome,
    provider_utilities,
    run_framework,
    run_mutation_suite,
    strategy_by_name,
)
from distauction.generate import InstanceParams, gen_equilibrium_instance, gen_instance
from distauction.core import Bid
from distauction.fixedpoint import fp


DOUBLE = InstanceParams("double", m=4, n=6, k=1)
STANDARD = InstanceParams("standard", m=4, n=5, k=1, groups=2)


def test_strategy_library_names_unique():
    names = [s.name for s in STRATEGY_LIBRARY]
    assert len(names) == len(set(names))
    assert "identity" in names and "withhold_all" in names
    for name in names:
        assert strategy_by_name(name).name == name
    with pytest.raises(KeyError):
        strategy_by_name("nope")


def test_global_outcome_rules():
    inst = gen_instance(DOUBLE, 0)
    res = run_framework(inst, 0)
    assert not res.outcome.is_abort
    assert global_outcome(res.outputs) == res.outcome
    assert global_outcome([res.outputs[0], ABORT, res.outputs[2], res.outputs[3]]).is_abort
    assert global_outcome([None] * 4).is_abort


@pytest.mark.parametrize("params", [DOUBLE, STANDARD], ids=["double", "standard"])
def test_identity_strategy_reproduces_baseline(params):
    inst = gen_instance(params, 3)
    for seed in range(10):
        base = run_framework(inst, seed)
        dev = run_framework(inst, seed, strategies={1: IdentityStrategy()})
        assert outcome_bytes(dev.outcome) == outcome_bytes(base.outcome)


@pytest.mark.parametrize("params", [DOUBLE, STANDARD], ids=["double", "standard"])
def test_withhold_all_forces_abort(params):
    inst = gen_instance(params, 3)
    res = run_framework(inst, 0, strategies={2: WithholdAllStrategy()})
    assert res.outcome.is_abort
    assert all(u == ZERO for u in provider_utilities(res.outcome, inst))


def test_equivocation_forces_abort():
    inst = gen_instance(DOUBLE, 1)
    for seed in range(10):
        res = run_framework(inst, seed, strategies={0: EquivocateStrategy()})
        assert res.outcome.is_abort


def test_corrupt_task_forces_abort_in_correct_build():
    inst = gen_instance(STANDARD, 1)
    for seed in range(10):
        res = run_framework(inst, seed, strategies={3: CorruptTaskStrategy()})
        assert res.outcome.is_abort


def test_output_flip_only_hurts():
    inst = gen_instance(DOUBLE, 1)
    res = run_framework(inst, 0, strategies={1: OutputFlipStrategy()})
    assert res.outcome.is_abort


def test_coin_constant_keeps_outcome_valid_with_exact_solver():
    inst = gen_instance(STANDARD, 2)
    for seed in range(5):
        base = run_framework(inst, seed)
        dev = run_framework(inst, seed, strategies={0: CoinConstantStrategy()})
        # exact solver ignores the coin, so the realized outcome is unchanged
        assert outcome_bytes(dev.outcome) == outcome_bytes(base.outcome)


@pytest.mark.parametrize("params", [DOUBLE, STANDARD], ids=["double", "standard"])
def test_small_k_resilience_holds(params):
    inst = gen_equilibrium_instance(params, 11)
    report = check_k_resilience(inst, 1, samples=40, seed0=100)
    assert report.ok, report.render_table()
    # control rows: identity never shows a gain
    for row in report.rows:
        if row.strategy == "identity":
            assert row.mean_diff == 0.0


def test_report_serialization():
    inst = gen_equilibrium_instance(DOUBLE, 11)
    report = check_k_resilience(
        inst, 1, strategies=STRATEGY_LIBRARY[:2], samples=5, seed0=0
    )
    import json

    doc = json.loads(report.to_json())
    assert doc["m"] == 4 and doc["k"] == 1
    assert len(doc["rows"]) == len(report.rows)
    assert "verdict" in report.render_table()


@pytest.mark.parametrize("params", [DOUBLE, STANDARD], ids=["double", "standard"])
def test_correct_simulation_check(params):
    instances = [gen_instance(params, seed) for seed in range(10)]
    assert check_correct_simulation(instances).ok


def test_bid_agreement_validity_check():
    instances = [gen_instance(DOUBLE, seed) for seed in range(5)]
    assert check_bid_agreement_validity(instances).ok


def test_inconsistent_bidder_unanimity_check():
    inst = gen_instance(DOUBLE, 4)
    alt = Bid(1, fp("0.9"), fp("0.125"))
    assert check_inconsistent_bidder_unanimity(inst, 1, alt).ok


@pytest.mark.parametrize("params", [DOUBLE, STANDARD], ids=["double", "standard"])
def test_abort_safety_check(params):
    instances = [gen_instance(params, seed) for seed in range(5)]
    assert check_abort_safety(instances).ok


def test_coin_uniformity_check():
    ok, p, counts = check_coin_uniformity(4, runs=500, seed0=0)
    assert ok and sum(counts) == 500


def test_coin_deviation_constant_contribution_keeps_uniformity():
    ok, p, realized = check_coin_deviation(
        4, CoinConstantStrategy(), runs=500, seed0=0
    )
    assert ok and realized == 500


def test_coin_deviation_withhold_forces_abort():
    ok, p, realized = check_coin_deviation(
        4, strategy_by_name("coin_withhold_reveal"), runs=50, seed0=0
    )
    assert ok and realized == 0


def test_coin_abort_contract():
    assert check_coin_abort_contract(4, runs=10).ok
    assert not check_coin_abort_contract(
        4, runs=10, mutations=frozenset({"unvalidated_coin_range"})
    ).ok


def test_transfer_abort_contract():
    assert check_transfer_abort_contract(4, runs=10).ok
    assert not check_transfer_abort_contract(
        4, runs=10, mutations=frozenset({"single_sender_dt"})
    ).ok


def test_truthfulness_small_lattice():
    report = check_bidder_truthfulness(n=2, m=1, lattice=("0.5", "1.0"))
    assert report.ok, report.failures[:5]


def test_mutation_suite_catches_all_planted_bugs():
    results = run_mutation_suite(seed=0)
    assert set(results) == {
        "single_sender_dt", "unvalidated_coin_range", "skip_input_validation"
    }
    for mut, res in results.items():
        assert res["clean_ok"], f"{mut}: check fails even without the bug"
        assert res["detected"], f"{mut}: planted bug not caught"
