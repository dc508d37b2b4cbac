"""Empirical game-theoretic harness for the distributed auction framework.

A library of deviation strategies is played by every coalition of bounded
size against honest providers; Monte Carlo utility estimates (with paired
seeds against the honest baseline) decide whether any deviation is
profitable. Complementary checks cover simulation correctness, abort
safety on inconsistent inputs, the common-coin contract, and bidder
truthfulness on a value lattice. A small mutation suite verifies the
checks catch planted protocol bugs.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .allocators import (
    AuctionSpec,
    StandardAuctionConfig,
    framework_machines,
    local_execute,
    parallel_allocator,
    standard_auction_allocate,
    vcg_payment,
)
from .blocks import (
    BOT,
    CommonCoinBlock,
    DataTransferBlock,
    DistributionSpec,
    HONEST,
    Strategy,
    TransferSpec,
    _SingleBlockMachine,
)
from .core import (
    ABORT,
    Bid,
    BidVector,
    Outcome,
    outcome_bytes,
    utility,
)
from .fixedpoint import FP, SCALE, ZERO, fp
from .generate import Instance, per_provider_bids
from .simnet import World, gen_fair_schedule


# ---------------------------------------------------------------------------
# deviation strategies


class IdentityStrategy(Strategy):
    """Behaves exactly like an honest provider; the harness control row."""

    name = "identity"


class LieInputStrategy(Strategy):
    """Feeds bid agreement a vector with every user value doubled."""

    name = "lie_input"

    def transform_input(self, pid, bids, rng):
        users = tuple(
            b if b.neutral else Bid(b.bidder_id, b.unit_value + b.unit_value, b.demand)
            for b in bids.user_bids
        )
        return BidVector(users, bids.provider_bids)


class WithholdAllStrategy(Strategy):
    """Sends nothing, ever."""

    name = "withhold_all"

    def transform_sends(self, pid, stage, sends, rng):
        return []


class EquivocateStrategy(Strategy):
    """Sends a tampered bid blob to the lowest-numbered peer during agreement."""

    name = "equivocate_consensus"

    def transform_sends(self, pid, stage, sends, rng):
        if stage != "ba":
            return sends
        victim = min((e.dst for e in sends), default=None)
        out = []
        for env in sends:
            if env.dst == victim and env.tag[1] == "b" and env.payload:
                tampered = bytes([env.payload[0] ^ 1]) + env.payload[1:]
                out.append(type(env)(env.src, env.dst, env.tag, tampered))
            else:
                out.append(env)
        return out


class CoinSkipCommitStrategy(Strategy):
    """Reveals a value other than the committed one."""

    name = "coin_skip_commit"

    def coin_reveal(self, pid, salt, raw, rng):
        return salt, (raw + 1) % SCALE


class CoinOutOfRangeStrategy(Strategy):
    """Commits to (and honestly reveals) a contribution outside [0, 1]."""

    name = "coin_out_of_range"

    def coin_commit_raw(self, pid, rng):
        return SCALE + (SCALE >> 1)


class CoinWithholdRevealStrategy(Strategy):
    """Commits but never reveals, stalling the coin."""

    name = "coin_withhold_reveal"

    def coin_reveal(self, pid, salt, raw, rng):
        return None


class CoinConstantStrategy(Strategy):
    """Always contributes zero instead of a random draw."""

    name = "coin_constant"

    def coin_commit_raw(self, pid, rng):
        return 0


class CorruptTaskStrategy(Strategy):
    """Reports task results with payments inflated by a large bonus."""

    name = "corrupt_task"

    BONUS = fp(1000)

    def transform_task_result(self, pid, task, value, rng):
        if task.startswith("payments"):
            return {i: p + self.BONUS for i, p in value.items()}
        if task == "double":
            alloc, payments = value
            provider_pay = tuple(
                p + self.BONUS if j == pid else p
                for j, p in enumerate(payments.provider_payments)
            )
            return alloc, type(payments)(payments.user_payments, provider_pay)
        return value


class OutputFlipStrategy(Strategy):
    """Replaces the computed outcome with abort at the last moment."""

    name = "output_flip"

    def transform_output(self, pid, outcome, rng):
        return ABORT


STRATEGY_LIBRARY: Tuple[Strategy, ...] = (
    IdentityStrategy(),
    LieInputStrategy(),
    WithholdAllStrategy(),
    EquivocateStrategy(),
    CoinSkipCommitStrategy(),
    CoinOutOfRangeStrategy(),
    CoinWithholdRevealStrategy(),
    CoinConstantStrategy(),
    CorruptTaskStrategy(),
    OutputFlipStrategy(),
)


def strategy_by_name(name: str) -> Strategy:
    for strat in STRATEGY_LIBRARY:
        if strat.name == name:
            return strat
    if name == "honest":
        return HONEST
    raise KeyError(f"unknown strategy {name!r}")


# ---------------------------------------------------------------------------
# framework runs and the global outcome


def global_outcome(outputs: Sequence) -> Outcome:
    """The realized outcome: a solution only if every provider reports the
    same one, otherwise abort."""
    outs = [o if isinstance(o, Outcome) else ABORT for o in outputs]
    if any(o.is_abort for o in outs):
        return ABORT
    ref = outcome_bytes(outs[0])
    if all(outcome_bytes(o) == ref for o in outs[1:]):
        return outs[0]
    return ABORT


@dataclass
class SimResult:
    outputs: list  # per-provider Outcome
    outcome: Outcome  # realized global outcome
    world: World
    machines: list


def run_framework(
    inst: Instance,
    run_seed: int,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
    policy: str = "round-robin-with-permutation",
    max_delay: int = 2,
    turn_budget: int = 50_000,
    overrides: Optional[dict] = None,
    record_log: bool = False,
) -> SimResult:
    """One full simulated auction among m providers."""
    bids_pp = per_provider_bids(inst, overrides)
    machines = framework_machines(inst.spec, bids_pp, run_seed, strategies, mutations)
    schedule = gen_fair_schedule(run_seed, inst.spec.m, policy, max_delay)
    world = World(machines, schedule, record_log=record_log)
    raw_outputs = world.run(turn_budget)
    outputs = [o if isinstance(o, Outcome) else ABORT for o in raw_outputs]
    return SimResult(outputs, global_outcome(outputs), world, machines)


def provider_utilities(outcome: Outcome, inst: Instance) -> List[FP]:
    return [utility("provider", j, outcome, inst.bids) for j in range(inst.spec.m)]


# ---------------------------------------------------------------------------
# k-resilience


@dataclass(frozen=True)
class CellRow:
    coalition: tuple
    strategy: str
    pid: int
    baseline_mean: float
    deviant_mean: float
    mean_diff: float
    half_width: float
    violation: bool


@dataclass
class EquilibriumReport:
    m: int
    k: int
    samples: int
    tolerance: float
    rows: List[CellRow] = field(default_factory=list)

    @property
    def violations(self) -> List[CellRow]:
        return [r for r in self.rows if r.violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps(
            {
                "m": self.m,
                "k": self.k,
                "samples": self.samples,
                "tolerance": self.tolerance,
                "ok": self.ok,
                "rows": [
                    {
                        "coalition": list(r.coalition),
                        "strategy": r.strategy,
                        "provider": r.pid,
                        "baseline_mean": r.baseline_mean,
                        "deviant_mean": r.deviant_mean,
                        "mean_diff": r.mean_diff,
                        "half_width": r.half_width,
                        "violation": r.violation,
                    }
                    for r in self.rows
                ],
            },
            sort_keys=True,
        )

    def render_table(self) -> str:
        header = f"{'coalition':>12} {'strategy':>22} {'pid':>4} {'baseline':>10} {'deviant':>10} {'diff':>10} {'hw':>9} verdict"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            coal = ",".join(map(str, r.coalition))
            verdict = "VIOLATION" if r.violation else "ok"
            lines.append(
                f"{coal:>12} {r.strategy:>22} {r.pid:>4} "
                f"{r.baseline_mean:>10.6f} {r.deviant_mean:>10.6f} "
                f"{r.mean_diff:>+10.6f} {r.half_width:>9.6f} {verdict}"
            )
        return "\n".join(lines)


def _coalitions(m: int, k: int):
    for size in range(1, k + 1):
        yield from itertools.combinations(range(m), size)


def _paired_stats(diffs: List[float]) -> Tuple[float, float]:
    mean = statistics.fmean(diffs)
    if len(diffs) < 2:
        return mean, float("inf")
    sd = statistics.stdev(diffs)
    return mean, 1.96 * sd / math.sqrt(len(diffs))


def check_k_resilience(
    inst: Instance,
    k: int,
    strategies: Sequence[Strategy] = STRATEGY_LIBRARY,
    samples: int = 200,
    tolerance: float = 0.0,
    seed0: int = 0,
    policy: str = "round-robin-with-permutation",
    max_delay: int = 2,
    progress=None,
) -> EquilibriumReport:
    """Play every strategy with every coalition of size <= k.

    Runs are paired with the honest baseline through common seeds; a cell
    violates k-resilience when some coalition member's mean utility gain
    exceeds the Monte Carlo 95% half-width plus the tolerance.
    """
    m = inst.spec.m
    seeds = [seed0 + s for s in range(samples)]
    baseline: List[List[float]] = []  # per seed, per provider
    for seed in seeds:
        res = run_framework(inst, seed, policy=policy, max_delay=max_delay)
        baseline.append([u.to_float() for u in provider_utilities(res.outcome, inst)])

    report = EquilibriumReport(m=m, k=k, samples=samples, tolerance=tolerance)
    for coalition in _coalitions(m, k):
        for strat in strategies:
            assignment = {pid: strat for pid in coalition}
            per_member: Dict[int, List[float]] = {pid: [] for pid in coalition}
            for s, seed in enumerate(seeds):
                res = run_framework(
                    inst,
                    seed,
                    strategies=assignment,
                    policy=policy,
                    max_delay=max_delay,
                )
                utils = provider_utilities(res.outcome, inst)
                for pid in coalition:
                    per_member[pid].append(utils[pid].to_float() - baseline[s][pid])
            for pid in coalition:
                diffs = per_member[pid]
                mean_diff, hw = _paired_stats(diffs)
                base_mean = statistics.fmean(b[pid] for b in baseline)
                report.rows.append(
                    CellRow(
                        coalition=coalition,
                        strategy=strat.name,
                        pid=pid,
                        baseline_mean=base_mean,
                        deviant_mean=base_mean + mean_diff,
                        mean_diff=mean_diff,
                        half_width=hw,
                        violation=mean_diff > hw + tolerance,
                    )
                )
            if progress is not None:
                progress(coalition, strat.name)
    return report


# ---------------------------------------------------------------------------
# correct simulation


@dataclass
class CheckReport:
    name: str
    total: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, ok: bool, detail: str) -> None:
        self.total += 1
        if not ok:
            self.failures.append(detail)


def check_correct_simulation(
    instances: Sequence[Instance],
    run_seed: int = 0,
    policy: str = "round-robin-with-permutation",
    max_delay: int = 2,
) -> CheckReport:
    """All-honest runs must agree with the trusted-auctioneer reference,
    byte for byte, on the same agreed bids and coin value."""
    report = CheckReport("correct-simulation")
    for idx, inst in enumerate(instances):
        res = run_framework(inst, run_seed + idx, record_log=False)
        agreed = res.machines[0].agreed
        coin = res.machines[0].coin_values[0] if res.machines[0].coin_values else 0
        alloc, payments = local_execute(agreed, inst.spec, coin)
        expected = outcome_bytes(Outcome.solution(alloc, payments))
        ok = all(outcome_bytes(o) == expected for o in res.outputs)
        report.record(ok, f"instance {idx}: simulated outputs differ from reference")
    return report


def check_bid_agreement_validity(
    instances: Sequence[Instance],
    run_seed: int = 0,
) -> CheckReport:
    """Honest, consistent bidders must see their bids agreed verbatim."""
    report = CheckReport("bid-agreement-validity")
    for idx, inst in enumerate(instances):
        res = run_framework(inst, run_seed + idx)
        ok = all(mc.agreed == inst.bids for mc in res.machines)
        report.record(ok, f"instance {idx}: agreed vector differs from the input bids")
    return report


def check_inconsistent_bidder_unanimity(
    inst: Instance,
    bidder_id: int,
    alt_bid: Bid,
    run_seed: int = 0,
) -> CheckReport:
    """A bidder sending different bids to different providers still yields
    one agreed bid, identical at every provider."""
    report = CheckReport("inconsistent-bidder-unanimity")
    overrides = {
        (bidder_id, pid): alt_bid for pid in range(inst.spec.m) if pid % 2 == 0
    }
    res = run_framework(inst, run_seed, overrides=overrides)
    agreed = [mc.agreed for mc in res.machines]
    ok = all(a is not None and a == agreed[0] for a in agreed)
    report.record(ok, "providers disagree on the combined bid vector")
    return report


# ---------------------------------------------------------------------------
# abort safety on inconsistent allocator inputs


def perturbed_inputs(inst: Instance) -> List[BidVector]:
    """Allocator inputs where provider 0 sees a slightly different vector."""
    users = list(inst.bids.user_bids)
    b0 = users[0]
    if b0.neutral:
        users[0] = Bid(0, fp("0.5"), fp("0.5"))
    else:
        users[0] = Bid(0, FP(b0.unit_value.raw + 1), b0.demand)
    altered = BidVector(tuple(users), inst.bids.provider_bids)
    return [altered] + [inst.bids] * (inst.spec.m - 1)


def check_abort_safety(
    instances: Sequence[Instance],
    run_seed: int = 0,
    mutations: frozenset = frozenset(),
    policy: str = "round-robin-with-permutation",
    max_delay: int = 2,
) -> CheckReport:
    """When providers enter the allocator with differing inputs, every
    provider must abort."""
    report = CheckReport("abort-safety")
    for idx, inst in enumerate(instances):
        inputs = perturbed_inputs(inst)
        schedule = gen_fair_schedule(run_seed + idx, inst.spec.m, policy, max_delay)
        outcomes, _ = parallel_allocator(
            inst.spec, inputs, schedule, run_seed + idx, mutations=mutations
        )
        ok = all(o.is_abort for o in outcomes)
        report.record(ok, f"instance {idx}: some provider produced a non-abort outcome")
    return report


# ---------------------------------------------------------------------------
# common coin checks


def coin_machines(
    m: int,
    dist: DistributionSpec,
    run_seed: int,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
) -> list:
    strategies = strategies or {}
    machines = []
    for pid in range(m):
        strat = strategies.get(pid, HONEST)
        rng = random.Random(f"distauction.coin:{run_seed}:{pid}")
        machines.append(
            _SingleBlockMachine(
                pid,
                m,
                lambda p, r=rng, s=strat: CommonCoinBlock(
                    "coin",
                    p,
                    m,
                    dist,
                    r,
                    strategy=s,
                    skip_range_check="unvalidated_coin_range" in mutations,
                ),
                strategy=strat,
                rng=rng,
            )
        )
    return machines


def run_coin(
    m: int,
    run_seed: int,
    dist: Optional[DistributionSpec] = None,
    strategies: Optional[Dict[int, Strategy]] = None,
    mutations: frozenset = frozenset(),
    max_delay: int = 2,
    turn_budget: int = 10_000,
) -> list:
    dist = dist or DistributionSpec("uniform01")
    machines = coin_machines(m, dist, run_seed, strategies, mutations)
    schedule = gen_fair_schedule(run_seed, m, max_delay=max_delay)
    world = World(machines, schedule, record_log=False)
    return world.run(turn_budget)


def chi_square_uniform(counts: Sequence[int]) -> float:
    """p-value of the chi-square test against the uniform distribution."""
    from scipy import stats

    total = sum(counts)
    expected = [total / len(counts)] * len(counts)
    return float(stats.chisquare(list(counts), expected).pvalue)


def check_coin_uniformity(
    m: int,
    runs: int = 1000,
    bins: int = 10,
    alpha: float = 0.01,
    seed0: int = 0,
) -> Tuple[bool, float, List[int]]:
    """Honest coin outputs binned over [0,1) must pass a chi-square test."""
    counts = [0] * bins
    for r in range(runs):
        outputs = run_coin(m, seed0 + r)
        u = outputs[0]
        assert all(o == u for o in outputs), "honest coin outputs must agree"
        counts[min(bins - 1, u.raw * bins // SCALE)] += 1
    p = chi_square_uniform(counts)
    return p >= alpha, p, counts


def check_coin_deviation(
    m: int,
    strategy: Strategy,
    runs: int = 1000,
    bins: int = 10,
    alpha: float = 0.01,
    seed0: int = 0,
    mutations: frozenset = frozenset(),
) -> Tuple[bool, float, int]:
    """A deviating participant may force abort but must not bias the coin.

    Returns (ok, p_value_or_nan, non_abort_count): ok requires all honest
    outputs per run to agree (value or abort), and any realized values to
    pass the uniformity test.
    """
    counts = [0] * bins
    realized = 0
    consistent = True
    for r in range(runs):
        outputs = run_coin(m, seed0 + r, strategies={0: strategy}, mutations=mutations)
        honest = outputs[1:]
        aborted = [o is BOT or o is None for o in honest]
        if all(aborted):
            continue
        if any(aborted) or any(o != honest[0] for o in honest):
            consistent = False
            continue
        realized += 1
        counts[min(bins - 1, honest[0].raw * bins // SCALE)] += 1
    if realized == 0:
        return consistent, float("nan"), 0
    p = chi_square_uniform(counts)
    return consistent and p >= alpha, p, realized


def check_coin_abort_contract(
    m: int,
    runs: int = 20,
    seed0: int = 0,
    mutations: frozenset = frozenset(),
) -> CheckReport:
    """An out-of-range contribution must force every honest party to abort."""
    report = CheckReport("coin-abort-contract")
    strat = CoinOutOfRangeStrategy()
    for r in range(runs):
        outputs = run_coin(m, seed0 + r, strategies={0: strat}, mutations=mutations)
        ok = all(o is BOT or o is None for o in outputs[1:])
        report.record(ok, f"run {r}: honest party accepted an out-of-range coin")
    return report


# ---------------------------------------------------------------------------
# data transfer contract


def check_transfer_abort_contract(
    m: int,
    runs: int = 20,
    seed0: int = 0,
    mutations: frozenset = frozenset(),
) -> CheckReport:
    """Conflicting sender copies must make every receiver abort."""
    report = CheckReport("transfer-abort-contract")
    spec = TransferSpec(frozenset({0, 1}), frozenset(range(m)))
    accept_single = "single_sender_dt" in mutations
    for r in range(runs):
        machines = []
        for pid in range(m):
            value = b"A" if pid == 0 else (b"B" if pid == 1 else None)
            machines.append(
                _SingleBlockMachine(
                    pid,
                    m,
                    lambda p, v=value: DataTransferBlock(
                        "dt", p, m, spec, v, accept_single_sender=accept_single
                    ),
                )
            )
        schedule = gen_fair_schedule(seed0 + r, m)
        outputs = World(machines, schedule, record_log=False).run(10_000)
        ok = all(o is BOT or o is None for o in outputs)
        report.record(ok, f"run {r}: a receiver accepted conflicting copies")
    return report


# ---------------------------------------------------------------------------
# bidder truthfulness on a value lattice


LATTICE = ("0.25", "0.5", "0.75", "1.0", "1.25")


def lattice_instances(n: int, m: int, lattice: Sequence[str] = LATTICE):
    """Standard-auction instances with all value combinations on the lattice;
    demands and capacities cycle through the same lattice."""
    points = [fp(s) for s in lattice]
    demands = [points[i % len(points)] for i in range(n)]
    capacities = tuple(points[(j + 2) % len(points)] for j in range(m))
    spec = AuctionSpec(
        "standard", m, n, 0, capacities, StandardAuctionConfig(solver="exact")
    )
    for combo in itertools.product(points, repeat=n):
        users = tuple(Bid(i, combo[i], demands[i]) for i in range(n))
        yield Instance(BidVector(users, None), spec)


def user_utility_for(
    inst: Instance, i: int, reported: Bid, true_value: FP, true_demand: FP,
    coin: int = 0,
) -> FP:
    """Utility of user i with the given true type when reporting `reported`.

    The valuation is all or nothing: a fill below the true demand is
    worthless, matching the single-provider assignment model.
    """
    users = list(inst.bids.user_bids)
    users[i] = reported
    bids = BidVector(tuple(users), None)
    spec = inst.spec
    alloc = standard_auction_allocate(bids, spec.capacities, spec.config, coin)
    pay = vcg_payment(bids, spec.capacities, spec.config, coin, alloc, i)
    served = alloc.user_total(i)
    value = true_value * true_demand if served.raw >= true_demand.raw else ZERO
    return value - pay


def check_bidder_truthfulness(
    n: int,
    m: int,
    lattice: Sequence[str] = LATTICE,
    coin: int = 0,
) -> CheckReport:
    """No user can profit by misreporting its value or demand, checked in
    exact fixed point over the lattice."""
    report = CheckReport("bidder-truthfulness")
    points = [fp(s) for s in lattice]
    deviant_values = points + [ZERO]
    for idx, inst in enumerate(lattice_instances(n, m, lattice)):
        for i, bid in enumerate(inst.bids.user_bids):
            truthful = user_utility_for(
                inst, i, bid, bid.unit_value, bid.demand, coin
            )
            for v in deviant_values:
                for d in points:
                    if v.raw == bid.unit_value.raw and d.raw == bid.demand.raw:
                        continue
                    lie = Bid(i, v, d)
                    gained = user_utility_for(
                        inst, i, lie, bid.unit_value, bid.demand, coin
                    )
                    report.record(
                        gained.raw <= truthful.raw,
                        f"instance {idx}: user {i} gains "
                        f"{(gained - truthful).decimal()} reporting "
                        f"({v.decimal()}, {d.decimal()})",
                    )
    return report


# ---------------------------------------------------------------------------
# mutation suite


def run_mutation_suite(seed: int = 0) -> Dict[str, dict]:
    """Plant each known protocol bug and confirm a check catches it."""
    from .generate import InstanceParams, gen_instance

    results: Dict[str, dict] = {}

    clean = check_transfer_abort_contract(4, runs=10, seed0=seed)
    buggy = check_transfer_abort_contract(
        4, runs=10, seed0=seed, mutations=frozenset({"single_sender_dt"})
    )
    results["single_sender_dt"] = {
        "check": "transfer-abort-contract",
        "clean_ok": clean.ok,
        "detected": not buggy.ok,
    }

    clean = check_coin_abort_contract(4, runs=10, seed0=seed)
    buggy = check_coin_abort_contract(
        4, runs=10, seed0=seed, mutations=frozenset({"unvalidated_coin_range"})
    )
    results["unvalidated_coin_range"] = {
        "check": "coin-abort-contract",
        "clean_ok": clean.ok,
        "detected": not buggy.ok,
    }

    params = InstanceParams("double", m=4, n=6, k=1)
    instances = [gen_instance(params, seed + i) for i in range(5)]
    clean = check_abort_safety(instances, run_seed=seed)
    buggy = check_abort_safety(
        instances, run_seed=seed, mutations=frozenset({"skip_input_validation"})
    )
    results["skip_input_validation"] = {
        "check": "abort-safety",
        "clean_ok": clean.ok,
        "detected": not buggy.ok,
    }
    return results
