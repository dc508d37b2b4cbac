"""Allocation algorithms and their distributed execution.

Two case-study auctions share one execution skeleton: a local reference
executor (the trusted-auctioneer path) and a task-graph-based distributed
path built from the protocol blocks. Both paths run the same allocation
code, so honest runs with pinned randomness are byte-identical.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from .blocks import (
    BOT,
    BidAgreementBlock,
    Block,
    CommonCoinBlock,
    DataTransferBlock,
    DistributionSpec,
    HONEST,
    InputValidationBlock,
    StagedMachine,
    Strategy,
    TransferSpec,
)
from .core import (
    ABORT,
    Allocation,
    BidVector,
    Outcome,
    PaymentVector,
    bidvector_bytes,
)
from .fixedpoint import FP, ZERO
from .simnet import Schedule, World

COIN_SPAN = 1 << 20  # solver seeds are drawn as uniform ints on the coin grid

MUTATIONS = frozenset(
    {"single_sender_dt", "unvalidated_coin_range", "skip_input_validation"}
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StandardAuctionConfig:
    epsilon: float = 0.1
    solver: str = "exact"  # "exact" | "local-search"
    groups: int = 1
    ls_iterations: int = 0  # 0 = derive from instance size

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must be in (0,1)")
        if self.solver not in ("exact", "local-search"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.groups < 1:
            raise ConfigError("group count must be positive")


@dataclass(frozen=True)
class AuctionSpec:
    kind: str  # "standard" | "double"
    m: int
    n: int
    k: int
    capacities: Optional[tuple] = None  # FP per provider (standard auctions)
    config: Optional[StandardAuctionConfig] = None

    def __post_init__(self):
        if self.kind not in ("standard", "double"):
            raise ConfigError(f"unknown auction kind {self.kind!r}")
        if self.m <= 2 * self.k:
            raise ConfigError("m > 2k is required")
        if self.kind == "standard":
            if self.capacities is None or len(self.capacities) != self.m:
                raise ConfigError("standard auction requires m capacities")
            if self.config is None:
                object.__setattr__(self, "config", StandardAuctionConfig())
            if self.config.groups * (self.k + 1) > self.m:
                raise ConfigError("c * (k+1) must not exceed m")

    @property
    def parallelism(self) -> int:
        return self.m // (self.k + 1)


# ---------------------------------------------------------------------------
# double auction: sorted water-filling with trade reduction


def double_auction(bids: BidVector) -> Tuple[Allocation, PaymentVector]:
    """Water-fill value-sorted users into cost-sorted providers.

    The traded prefix is cut at the largest index whose threshold prices
    (the next user value / provider cost) exist and are budget balanced;
    winners pay the threshold user value per unit and providers receive the
    threshold cost per unit. With no threshold bids at all, everyone trades
    at the midpoint of the marginal pair. User payments round up and
    provider payments round down, so budget balance is structural.
    """
    if not bids.is_double:
        raise ConfigError("double auction requires provider bids")
    m = len(bids.provider_bids)
    n = bids.n

    users = sorted(
        (b for b in bids.user_bids if not b.neutral and b.demand.raw > 0),
        key=lambda b: (-b.unit_value.raw, b.bidder_id),
    )
    providers = sorted(
        (pb for pb in bids.provider_bids if pb.capacity.raw > 0),
        key=lambda pb: (pb.unit_cost.raw, pb.provider_id),
    )
    nu, np_ = len(users), len(providers)

    kmax = 0
    for i in range(min(nu, np_)):
        if users[i].unit_value.raw >= providers[i].unit_cost.raw:
            kmax = i + 1
        else:
            break

    winners = 0
    buyer_price = seller_price = ZERO
    if kmax > 0:
        lmax = min(kmax, nu - 1, np_ - 1)
        if lmax >= 1:
            l = lmax if lmax < kmax else kmax - 1
            if l >= 1:
                winners = l
                buyer_price = users[l].unit_value
                seller_price = providers[l].unit_cost
        else:
            # no threshold bids on one side: uniform midpoint price
            winners = kmax
            marginal_u = users[kmax - 1].unit_value
            marginal_p = providers[kmax - 1].unit_cost
            buyer_price = seller_price = FP((marginal_u.raw + marginal_p.raw) >> 1)

    quantities = [[ZERO] * n for _ in range(m)]
    if winners:
        cap_left = [pb.capacity.raw for pb in providers]
        pj = 0
        for user in users[:winners]:
            need = user.demand.raw
            while need > 0 and pj < np_:
                if cap_left[pj] == 0:
                    pj += 1
                    continue
                take = min(need, cap_left[pj])
                row = providers[pj].provider_id
                quantities[row][user.bidder_id] = FP(
                    quantities[row][user.bidder_id].raw + take
                )
                cap_left[pj] -= take
                need -= take

    alloc = Allocation(tuple(tuple(row) for row in quantities))
    user_pay = tuple(
        buyer_price.mul_ceil(alloc.user_total(i)) if winners else ZERO
        for i in range(n)
    )
    provider_pay = tuple(
        seller_price * alloc.provider_total(j) if winners else ZERO
        for j in range(m)
    )
    return alloc, PaymentVector(user_pay, provider_pay)


# ---------------------------------------------------------------------------
# standard auction: single-provider assignment maximizing welfare


def _instance_arrays(bids: BidVector, capacities: Sequence[FP]):
    demands = [b.demand.raw for b in bids.user_bids]
    weights = [
        0 if b.neutral else (b.unit_value.raw * b.demand.raw) >> 20
        for b in bids.user_bids
    ]
    caps = [c.raw for c in capacities]
    return demands, weights, caps


def _solve_exact(demands, weights, caps) -> List[int]:
    """Branch-and-bound over user -> provider-or-unassigned assignments.

    Users are explored in decreasing welfare-contribution order; the bound
    adds the full remaining contributions. Deterministic: the first optimum
    in DFS order (providers ascending, then unassigned) wins.
    """
    n = len(demands)
    order = sorted(range(n), key=lambda i: (-weights[i], i))
    suffix = [0] * (n + 1)
    for pos in range(n - 1, -1, -1):
        suffix[pos] = suffix[pos + 1] + weights[order[pos]]

    best = {"w": -1, "assign": [-1] * n}
    assign = [-1] * n
    caps = list(caps)
    m = len(caps)

    def dfs(pos: int, current: int) -> None:
        if current + suffix[pos] <= best["w"]:
            return
        if pos == n:
            best["w"] = current
            best["assign"] = assign.copy()
            return
        i = order[pos]
        d, w = demands[i], weights[i]
        if w > 0:
            for j in range(m):
                if d <= caps[j]:
                    caps[j] -= d
                    assign[i] = j
                    dfs(pos + 1, current + w)
                    caps[j] += d
            assign[i] = -1
        dfs(pos + 1, current)

    dfs(0, 0)
    return best["assign"]


@lru_cache(maxsize=16384)
def _solve_exact_cached(demands: tuple, weights: tuple, caps: tuple) -> tuple:
    # The exact solve is a pure function of the instance; Monte Carlo harness
    # runs hit the same instances thousands of times.
    return tuple(_solve_exact(list(demands), list(weights), list(caps)))


def _greedy_assign(demands, weights, caps) -> List[int]:
    n = len(demands)
    assign = [-1] * n
    left = list(caps)
    for i in sorted(range(n), key=lambda i: (-weights[i], i)):
        if weights[i] == 0:
            continue
        for j in range(len(left)):
            if demands[i] <= left[j]:
                left[j] -= demands[i]
                assign[i] = j
                break
    return assign


def _solve_local_search(demands, weights, caps, seed: int, iterations: int) -> List[int]:
    """Greedy start plus seeded move/swap hill climbing (strict improvement)."""
    n, m = len(demands), len(caps)
    assign = _greedy_assign(demands, weights, caps)
    left = list(caps)
    for i, j in enumerate(assign):
        if j >= 0:
            left[j] -= demands[i]
    rng = random.Random(seed)
    for _ in range(iterations):
        i = rng.randrange(n)
        if weights[i] == 0:
            continue
        target = rng.randrange(m + 1) - 1  # -1 = unassign
        cur = assign[i]
        if target == cur:
            continue
        if target == -1:
            continue  # dropping a user never strictly improves welfare
        if cur == -1 and demands[i] <= left[target]:
            assign[i] = target
            left[target] -= demands[i]
            continue
        if cur >= 0 and demands[i] <= left[target]:
            # lateral move frees capacity; try to pull in a waiting user
            left[cur] += demands[i]
            left[target] -= demands[i]
            assign[i] = target
            for cand in range(n):
                if assign[cand] == -1 and weights[cand] > 0 and demands[cand] <= left[cur]:
                    assign[cand] = cur
                    left[cur] -= demands[cand]
                    break
    return assign


def _assignment_to_allocation(assign: List[int], bids: BidVector, m: int) -> Allocation:
    n = bids.n
    quantities = [[ZERO] * n for _ in range(m)]
    for i, j in enumerate(assign):
        if j >= 0:
            quantities[j][i] = bids.user_bids[i].demand
    return Allocation(tuple(tuple(row) for row in quantities))


def standard_auction_allocate(
    bids: BidVector,
    capacities: Sequence[FP],
    cfg: StandardAuctionConfig,
    coin_raw: int,
) -> Allocation:
    """Welfare-maximizing (or local-search approximate) single-provider assignment."""
    demands, weights, caps = _instance_arrays(bids, capacities)
    assign = _solve_assign(demands, weights, caps, cfg, coin_raw)
    return _assignment_to_allocation(assign, bids, len(caps))


def _welfare_raw(assign: List[int], weights) -> int:
    return sum(w for w, j in zip(weights, assign) if j >= 0)


def _solve_assign(demands, weights, caps, cfg: StandardAuctionConfig, coin_raw: int):
    if cfg.solver == "exact":
        return list(_solve_exact_cached(tuple(demands), tuple(weights), tuple(caps)))
    iters = cfg.ls_iterations or max(200, 8 * len(demands) * len(caps))
    return _solve_local_search(demands, weights, caps, coin_raw, iters)


def vcg_payment(
    bids: BidVector,
    capacities: Sequence[FP],
    cfg: StandardAuctionConfig,
    coin_raw: int,
    alloc: Allocation,
    i: int,
) -> FP:
    """Clarke payment: externality of user i, clamped at zero.

    The counterfactual welfare reruns the same solver with the same coin
    randomness and user i neutralized.
    """
    demands, weights, caps = _instance_arrays(bids, capacities)
    assigned = any(alloc.quantities[j][i].raw > 0 for j in range(alloc.m))
    value_i = weights[i] if assigned else 0
    welfare_with = sum(
        weights[u]
        for u in range(bids.n)
        if any(alloc.quantities[j][u].raw > 0 for j in range(alloc.m))
    )
    wo_weights = list(weights)
    wo_weights[i] = 0
    wo_demands = list(demands)
    wo_demands[i] = 0
    assign_wo = _solve_assign(wo_demands, wo_weights, caps, cfg, coin_raw)
    welfare_without = _welfare_raw(assign_wo, wo_weights)
    raw = welfare_without - (welfare_with - value_i)
    return FP(max(0, raw))


def standard_payments(
    bids: BidVector,
    capacities: Sequence[FP],
    cfg: StandardAuctionConfig,
    coin_raw: int,
    alloc: Allocation,
    users: Sequence[int],
) -> Dict[int, FP]:
    return {i: vcg_payment(bids, capacities, cfg, coin_raw, alloc, i) for i in users}


def route_provider_payments(alloc: Allocation, user_payments: Sequence[FP]) -> tuple:
    """Each provider collects the payments of the users it serves."""
    out = []
    for j in range(alloc.m):
        total = ZERO
        for i, q in enumerate(alloc.quantities[j]):
            if q.raw > 0:
                total = total + user_payments[i]
        out.append(total)
    return tuple(out)


# ---------------------------------------------------------------------------
# task graph


@dataclass(frozen=True)
class Task:
    task_id: str
    kind: str
    params: tuple = ()


@dataclass(frozen=True)
class TaskGraph:
    tasks: tuple
    deps: tuple  # (upstream_id, downstream_id) edges
    assignment: dict  # task_id -> frozenset of provider ids

    def to_json(self) -> str:
        return json.dumps(
            {
                "tasks": [
                    {"id": t.task_id, "kind": t.kind, "params": list(t.params)}
                    for t in self.tasks
                ],
                "deps": [list(edge) for edge in self.deps],
                "assignment": {
                    t: sorted(providers) for t, providers in self.assignment.items()
                },
            },
            sort_keys=True,
        )


def provider_groups(m: int, c: int) -> List[tuple]:
    """Split providers into c contiguous groups, remainder to the first ones."""
    base, extra = divmod(m, c)
    groups, start = [], 0
    for g in range(c):
        size = base + (1 if g < extra else 0)
        groups.append(tuple(range(start, start + size)))
        start += size
    return groups


def user_groups(n: int, c: int) -> List[tuple]:
    base, extra = divmod(n, c)
    groups, start = [], 0
    for g in range(c):
        size = base + (1 if g < extra else 0)
        groups.append(tuple(range(start, start + size)))
        start += size
    return groups


def build_task_graph(spec: AuctionSpec) -> TaskGraph:
    everyone = frozenset(range(spec.m))
    if spec.kind == "double":
        task = Task("sink", "double-auction")
        return TaskGraph((task,), (), {"sink": everyone})
    c = spec.config.groups
    if c * (spec.k + 1) > spec.m:
        raise ConfigError("c * (k+1) must not exceed m")
    tasks = [Task("allocate", "standard-allocation")]
    deps = []
    assignment = {"allocate": everyone}
    pgroups = provider_groups(spec.m, c)
    ugroups = user_groups(spec.n, c)
    for g in range(c):
        tid = f"payments:{g}"
        tasks.append(Task(tid, "vcg-payments", params=(ugroups[g],)))
        deps.append(("allocate", tid))
        deps.append((tid, "sink"))
        assignment[tid] = frozenset(pgroups[g])
    tasks.append(Task("sink", "gather"))
    deps.append(("allocate", "sink"))
    assignment["sink"] = everyone
    return TaskGraph(tuple(tasks), tuple(deps), assignment)


# ---------------------------------------------------------------------------
# local reference executor (the trusted-auctioneer path)


def local_execute(
    bids: BidVector, spec: AuctionSpec, seed: int
) -> Tuple[Allocation, PaymentVector]:
    """Run the allocation algorithm sequentially, substituting seed for coin output."""
    if spec.kind == "double":
        return double_auction(bids)
    cfg = spec.config
    alloc = standard_auction_allocate(bids, spec.capacities, cfg, seed)
    user_pay = tuple(
        vcg_payment(bids, spec.capacities, cfg, seed, alloc, i) for i in range(bids.n)
    )
    provider_pay = route_provider_payments(alloc, user_pay)
    return alloc, PaymentVector(user_pay, provider_pay)


# ---------------------------------------------------------------------------
# distributed framework provider


def _payments_chunk_bytes(chunk: Dict[int, FP]) -> bytes:
    out = [struct.pack("<I", len(chunk))]
    for i in sorted(chunk):
        out.append(struct.pack("<Iq", i, chunk[i].raw))
    return b"".join(out)


def _payments_chunk_parse(blob: bytes) -> Dict[int, FP]:
    (count,) = struct.unpack_from("<I", blob, 0)
    chunk = {}
    off = 4
    for _ in range(count):
        i, raw = struct.unpack_from("<Iq", blob, off)
        chunk[i] = FP(raw)
        off += 12
    return chunk


def _capacities_bytes(capacities) -> bytes:
    return b"CAPS" + b"".join(struct.pack("<Q", c.raw) for c in capacities)


class FrameworkProvider(StagedMachine):
    """One provider running the full framework: bid agreement, input
    validation, then the task graph with coin and data transfers."""

    def __init__(
        self,
        pid: int,
        spec: AuctionSpec,
        local_bids: Optional[BidVector],
        run_seed: int,
        strategy: Strategy = HONEST,
        mutations: frozenset = frozenset(),
        allocator_input: Optional[BidVector] = None,
    ):
        rng = random.Random(f"distauction:{run_seed}:{pid}")
        super().__init__(pid, spec.m, strategy, rng)
        unknown = mutations - MUTATIONS
        if unknown:
            raise ConfigError(f"unknown mutations {sorted(unknown)}")
        self.spec = spec
        self.local_bids = local_bids
        self.mutations = mutations
        self.allocator_input = allocator_input
        self.agreed: Optional[BidVector] = None
        self.coin_values: List[int] = []
        self._alloc: Optional[Allocation] = None
        self._own_chunk: Optional[Dict[int, FP]] = None
        self._graph = build_task_graph(spec)

    # -- pipeline ----------------------------------------------------------

    def first_stage(self):
        if self.allocator_input is not None:
            self.agreed = self.allocator_input
            return self._input_validation_stage()
        bids = self.strategy.transform_input(self.pid, self.local_bids, self.rng)
        return [BidAgreementBlock("ba", self.pid, self.m, bids)]

    def next_stage(self, finished):
        results = {block.block_id: block.result for block in finished}
        if any(r is BOT for r in results.values()):
            self._emit(ABORT)
            return None
        first_id = finished[0].block_id
        if first_id == "ba":
            self.agreed = results["ba"]
            return self._input_validation_stage()
        if first_id == "iv":
            if self.spec.kind == "double":
                return self._double_compute()
            return [self._coin_block("cc0")]
        if first_id.startswith("cc"):
            self.coin_values.append(results[first_id])
            return self._standard_tasks()
        if first_id.startswith("dt:"):
            return self._standard_sink(results)
        raise AssertionError(f"unexpected stage {first_id}")

    def _emit(self, outcome: Outcome) -> None:
        self.output = self.strategy.transform_output(self.pid, outcome, self.rng)

    def _input_validation_stage(self):
        payload = bidvector_bytes(self.agreed)
        if self.spec.kind == "standard":
            payload += _capacities_bytes(self.spec.capacities)
        return [
            InputValidationBlock(
                "iv",
                self.pid,
                self.m,
                payload,
                skip_validation="skip_input_validation" in self.mutations,
            )
        ]

    def _coin_block(self, block_id: str) -> CommonCoinBlock:
        return CommonCoinBlock(
            block_id,
            self.pid,
            self.m,
            DistributionSpec("uniform_int", span=COIN_SPAN),
            self.rng,
            strategy=self.strategy,
            skip_range_check="unvalidated_coin_range" in self.mutations,
        )

    def _double_compute(self):
        result = double_auction(self.agreed)
        result = self.strategy.transform_task_result(self.pid, "double", result, self.rng)
        alloc, payments = result
        self._emit(Outcome.solution(alloc, payments))
        return None

    def _standard_tasks(self):
        spec, coin = self.spec, self.coin_values[0]
        alloc = standard_auction_allocate(self.agreed, spec.capacities, spec.config, coin)
        alloc = self.strategy.transform_task_result(self.pid, "allocate", alloc, self.rng)
        self._alloc = alloc
        c = spec.config.groups
        pgroups = provider_groups(spec.m, c)
        ugroups = user_groups(spec.n, c)
        everyone = frozenset(range(spec.m))
        blocks = []
        for g in range(c):
            members = frozenset(pgroups[g])
            value = None
            if self.pid in members:
                chunk = standard_payments(
                    self.agreed, spec.capacities, spec.config, coin, alloc, ugroups[g]
                )
                chunk = self.strategy.transform_task_result(
                    self.pid, f"payments:{g}", chunk, self.rng
                )
                self._own_chunk = chunk
                value = _payments_chunk_bytes(chunk)
            blocks.append(
                DataTransferBlock(
                    f"dt:{g}",
                    self.pid,
                    self.m,
                    TransferSpec(members, everyone, domain="payments"),
                    value,
                    accept_single_sender="single_sender_dt" in self.mutations,
                )
            )
        return blocks

    def _standard_sink(self, results):
        payments: Dict[int, FP] = {}
        for blob in results.values():
            payments.update(_payments_chunk_parse(blob))
        user_pay = tuple(payments.get(i, ZERO) for i in range(self.spec.n))
        provider_pay = route_provider_payments(self._alloc, user_pay)
        self._emit(Outcome.solution(self._alloc, PaymentVector(user_pay, provider_pay)))
        return None


# ---------------------------------------------------------------------------
# run helpers


def framework_machines(
    spec: AuctionSpec,
    bids_per_provider: Sequence[BidVector],
    run_seed: int,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
) -> List[FrameworkProvider]:
    strategies = strategies or {}
    return [
        FrameworkProvider(
            pid,
            spec,
            bids_per_provider[pid],
            run_seed,
            strategy=strategies.get(pid, HONEST),
            mutations=mutations,
        )
        for pid in range(spec.m)
    ]


def allocator_machines(
    spec: AuctionSpec,
    allocator_inputs: Sequence[BidVector],
    run_seed: int,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
) -> List[FrameworkProvider]:
    """Machines entering directly at the allocator (bid agreement skipped)."""
    strategies = strategies or {}
    return [
        FrameworkProvider(
            pid,
            spec,
            None,
            run_seed,
            strategy=strategies.get(pid, HONEST),
            mutations=mutations,
            allocator_input=allocator_inputs[pid],
        )
        for pid in range(spec.m)
    ]


def parallel_allocator(
    spec: AuctionSpec,
    allocator_inputs: Sequence[BidVector],
    schedule: Schedule,
    run_seed: int,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
    turn_budget: int = 200_000,
) -> Tuple[List[Outcome], World]:
    """Run the allocator among all providers; per-provider outcomes returned.

    Providers terminated by the budget or by quiescence score as abort.
    """
    machines = allocator_machines(spec, allocator_inputs, run_seed, strategies, mutations)
    world = World(machines, schedule)
    outputs = world.run(turn_budget)
    return [out if isinstance(out, Outcome) else ABORT for out in outputs], world

