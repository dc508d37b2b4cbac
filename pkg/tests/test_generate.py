"""Instance generation on the fixed-point grid."""

import json

from distauction.core import Outcome, utility
from distauction.allocators import local_execute
from distauction.fixedpoint import fp
from distauction.generate import (
    Instance,
    InstanceParams,
    gen_equilibrium_instance,
    gen_instance,
    per_provider_bids,
)
from distauction.core import Bid


def test_generation_is_deterministic():
    params = InstanceParams("double", m=4, n=8, k=1)
    assert gen_instance(params, 5) == gen_instance(params, 5)
    assert gen_instance(params, 5) != gen_instance(params, 6)


def test_value_and_demand_ranges():
    params = InstanceParams("double", m=4, n=50, k=1)
    lo, hi = fp("0.75").raw, fp("1.25").raw
    for seed in range(10):
        inst = gen_instance(params, seed)
        for b in inst.bids.user_bids:
            assert lo <= b.unit_value.raw <= hi
            assert 0 < b.demand.raw <= fp("1").raw
        for pb in inst.bids.provider_bids:
            assert 0 < pb.unit_cost.raw <= fp("1").raw
            assert pb.capacity.raw >= 0


def test_double_capacity_scales_demand_share():
    params = InstanceParams("double", m=4, n=40, k=1)
    for seed in range(10):
        inst = gen_instance(params, seed)
        total = sum(b.demand.raw for b in inst.bids.user_bids)
        share = total // 4
        for pb in inst.bids.provider_bids:
            # capacity = share * u with u in [0.5, 1.5] (floor-rounded)
            assert pb.capacity.raw <= (share * fp("1.5").raw) >> 20
            assert pb.capacity.raw >= ((share * fp("0.5").raw) >> 20) - 1


def test_standard_capacity_fraction():
    params = InstanceParams("standard", m=4, n=20, k=1)
    for seed in range(10):
        inst = gen_instance(params, seed)
        total = sum(b.demand.raw for b in inst.bids.user_bids)
        for c in inst.spec.capacities:
            assert c.raw <= (total * fp("0.25").raw) >> 20


def test_equilibrium_instance_gives_no_provider_negative_utility():
    for kind in ("double", "standard"):
        params = InstanceParams(kind, m=4, n=8, k=1)
        inst = gen_equilibrium_instance(params, 3)
        alloc, pay = local_execute(inst.bids, inst.spec, 0)
        outcome = Outcome.solution(alloc, pay)
        for j in range(4):
            assert utility("provider", j, outcome, inst.bids).raw >= 0


def test_per_provider_bids_overrides():
    params = InstanceParams("double", m=4, n=4, k=1)
    inst = gen_instance(params, 0)
    alt = Bid(2, fp("0.9"), fp("0.1"))
    vectors = per_provider_bids(inst, {(2, 1): alt})
    assert vectors[0].user_bids[2] == inst.bids.user_bids[2]
    assert vectors[1].user_bids[2] == alt
    assert vectors[1].provider_bids == inst.bids.provider_bids


def test_dump_json_is_exact():
    params = InstanceParams("standard", m=2, n=3, k=0)
    inst = gen_instance(params, 1)
    doc = json.loads(inst.dump_json())
    assert doc["kind"] == "standard"
    assert len(doc["values"]) == 3
    assert len(doc["capacities"]) == 2
