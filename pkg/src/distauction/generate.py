"""Random instance generation on the fixed-point grid.

User values are uniform on [0.75, 1.25], demands and provider unit costs
uniform on (0, 1]. Double-auction capacities scale the per-provider demand
share by a factor in [0.5, 1.5]; standard-auction capacities scale the
total demanded bandwidth by a factor in [0, 0.25], so roughly at most a
quarter of the demand can win.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Optional, Tuple

from .allocators import AuctionSpec, StandardAuctionConfig, local_execute
from .core import Bid, BidVector, Outcome, ProviderBid, utility
from .fixedpoint import FP


@dataclass(frozen=True)
class InstanceParams:
    kind: str  # "standard" | "double"
    m: int
    n: int
    k: int
    groups: int = 1
    solver: str = "exact"
    epsilon: float = 0.1
    ls_iterations: int = 0
    value_range: Tuple[str, str] = ("0.75", "1.25")
    demand_max: str = "1"
    cost_max: str = "1"
    capacity_scale: Tuple[str, str] = ("0.5", "1.5")  # double auctions
    capacity_fraction_max: str = "0.25"  # standard auctions


@dataclass(frozen=True)
class Instance:
    bids: BidVector
    spec: AuctionSpec

    def dump_json(self) -> str:
        """Instance dump shared with the oracle tools (decimal fixed point)."""
        doc = {
            "kind": self.spec.kind,
            "n": self.spec.n,
            "m": self.spec.m,
            "values": [b.unit_value.decimal() for b in self.bids.user_bids],
            "demands": [b.demand.decimal() for b in self.bids.user_bids],
        }
        if self.spec.kind == "double":
            doc["costs"] = [pb.unit_cost.decimal() for pb in self.bids.provider_bids]
            doc["capacities"] = [pb.capacity.decimal() for pb in self.bids.provider_bids]
        else:
            doc["capacities"] = [c.decimal() for c in self.spec.capacities]
        return json.dumps(doc, sort_keys=True)


def _uniform_raw(rng: random.Random, lo_raw: int, hi_raw: int) -> int:
    return rng.randint(lo_raw, hi_raw)


def gen_instance(params: InstanceParams, seed: int) -> Instance:
    """Deterministic-in-seed instance on the fixed-point grid."""
    rng = random.Random(f"distauction.gen:{seed}")
    vlo, vhi = (FP.parse(s).raw for s in params.value_range)
    dmax = FP.parse(params.demand_max).raw
    users = tuple(
        Bid(
            i,
            FP(_uniform_raw(rng, vlo, vhi)),
            FP(_uniform_raw(rng, 1, dmax)),  # open interval: never zero demand
        )
        for i in range(params.n)
    )
    total_demand = sum(b.demand.raw for b in users)

    if params.kind == "double":
        cmax = FP.parse(params.cost_max).raw
        slo, shi = (FP.parse(s).raw for s in params.capacity_scale)
        share = total_demand // max(1, params.m)
        providers = tuple(
            ProviderBid(
                j,
                FP(_uniform_raw(rng, 1, cmax)),
                FP((share * _uniform_raw(rng, slo, shi)) >> 20),
            )
            for j in range(params.m)
        )
        bids = BidVector(users, providers)
        spec = AuctionSpec("double", params.m, params.n, params.k)
        return Instance(bids, spec)

    fmax = FP.parse(params.capacity_fraction_max).raw
    capacities = tuple(
        FP((total_demand * _uniform_raw(rng, 0, fmax)) >> 20) for _ in range(params.m)
    )
    cfg = StandardAuctionConfig(
        epsilon=params.epsilon,
        solver=params.solver,
        groups=params.groups,
        ls_iterations=params.ls_iterations,
    )
    bids = BidVector(users, None)
    spec = AuctionSpec("standard", params.m, params.n, params.k, capacities, cfg)
    return Instance(bids, spec)


def gen_equilibrium_instance(
    params: InstanceParams, seed: int, coin_seed: int = 0, max_tries: int = 1000
) -> Instance:
    """An instance whose honest outcome gives every provider utility >= 0.

    The equilibrium checks assume providers prefer the solution to abort;
    instances where some provider would be paid below cost are redrawn.
    """
    for attempt in range(max_tries):
        inst = gen_instance(params, seed + 1_000_003 * attempt)
        alloc, payments = local_execute(inst.bids, inst.spec, coin_seed)
        outcome = Outcome.solution(alloc, payments)
        if all(
            utility("provider", j, outcome, inst.bids).raw >= 0
            for j in range(inst.spec.m)
        ):
            return inst
    raise RuntimeError("could not generate a solution-preference instance")


def per_provider_bids(inst: Instance, overrides: Optional[dict] = None):
    """Each provider's local bid vector; overrides map (bidder_id, pid) -> Bid
    for inconsistent bidders."""
    if not overrides:
        return [inst.bids] * inst.spec.m
    vectors = []
    for pid in range(inst.spec.m):
        users = tuple(
            overrides.get((i, pid), bid) for i, bid in enumerate(inst.bids.user_bids)
        )
        vectors.append(BidVector(users, inst.bids.provider_bids))
    return vectors
