"""Command-line interface: simulate | bench | check | oracle-compare.

Experiments are described by an INI config file; a handful of flags and
environment variables (DISTAUCTION_SEED, DISTAUCTION_OUTPUT_DIR) override
it. Reports are written as JSON plus a CSV summary. Exit codes: 0 success,
1 a check or run failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from . import gametheory
from .allocators import (
    ConfigError,
    StandardAuctionConfig,
    local_execute,
    standard_auction_allocate,
    vcg_payment,
)
from .core import BidVector, Outcome, outcome_bytes, outcome_json
from .fixedpoint import FP
from .generate import Instance, InstanceParams, gen_equilibrium_instance, gen_instance
from .simnet import POLICIES


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


@dataclass
class ExperimentConfig:
    kind: str = "double"
    m: int = 4
    n: int = 16
    k: int = 1
    groups: int = 1
    solver: str = "exact"
    epsilon: float = 0.1
    ls_iterations: int = 0
    seed: int = 1
    rounds: int = 10
    policy: str = "round-robin-with-permutation"
    max_delay: int = 2
    turn_budget: int = 50_000
    samples: int = 100
    tolerance: float = 0.0
    coin_runs: int = 1000
    instances: int = 20
    output_dir: str = "out"

    def validate(self) -> None:
        if self.kind not in ("double", "standard"):
            raise UsageError(f"auction.kind must be 'double' or 'standard', got {self.kind!r}")
        if self.m < 1:
            raise UsageError("auction.m must be positive")
        if self.m <= 2 * self.k:
            raise UsageError(f"auction.m must exceed 2 * auction.k (m={self.m}, k={self.k})")
        if self.n < 1:
            raise UsageError("auction.n must be positive")
        if self.groups < 1:
            raise UsageError("auction.groups must be positive")
        if self.groups * (self.k + 1) > self.m:
            raise UsageError(
                f"auction.groups * (auction.k + 1) must not exceed auction.m "
                f"(groups={self.groups}, k={self.k}, m={self.m})"
            )
        if self.solver not in ("exact", "local-search"):
            raise UsageError(f"auction.solver must be 'exact' or 'local-search', got {self.solver!r}")
        if not 0 < self.epsilon < 1:
            raise UsageError("auction.epsilon must be in (0, 1)")
        if self.rounds < 1:
            raise UsageError("simulation.rounds must be positive")
        if self.policy not in POLICIES:
            raise UsageError(f"simulation.policy must be one of {POLICIES}")
        if self.max_delay < 1:
            raise UsageError("simulation.max_delay must be positive")
        if self.turn_budget < 1:
            raise UsageError("simulation.turn_budget must be positive")
        if self.samples < 1:
            raise UsageError("check.samples must be positive")
        if self.tolerance < 0:
            raise UsageError("check.tolerance must be nonnegative")
        if self.coin_runs < 1:
            raise UsageError("check.coin_runs must be positive")
        if self.instances < 1:
            raise UsageError("check.instances must be positive")

    def params(self) -> InstanceParams:
        return InstanceParams(
            kind=self.kind,
            m=self.m,
            n=self.n,
            k=self.k,
            groups=self.groups,
            solver=self.solver,
            epsilon=self.epsilon,
            ls_iterations=self.ls_iterations,
        )


_SECTIONS = {
    "auction": {
        "kind": ("kind", str),
        "m": ("m", int),
        "n": ("n", int),
        "k": ("k", int),
        "groups": ("groups", int),
        "solver": ("solver", str),
        "epsilon": ("epsilon", float),
        "ls_iterations": ("ls_iterations", int),
    },
    "simulation": {
        "seed": ("seed", int),
        "rounds": ("rounds", int),
        "policy": ("policy", str),
        "max_delay": ("max_delay", int),
        "turn_budget": ("turn_budget", int),
    },
    "check": {
        "samples": ("samples", int),
        "tolerance": ("tolerance", float),
        "coin_runs": ("coin_runs", int),
        "instances": ("instances", int),
    },
    "output": {
        "directory": ("output_dir", str),
    },
}


def load_config(path: Optional[str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise UsageError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise UsageError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                attr, typ = _SECTIONS[section][key]
                try:
                    setattr(cfg, attr, typ(raw))
                except ValueError:
                    raise UsageError(
                        f"config key {section}.{key} must be {typ.__name__}, got {raw!r}"
                    ) from None
    if "DISTAUCTION_SEED" in os.environ:
        try:
            cfg.seed = int(os.environ["DISTAUCTION_SEED"])
        except ValueError:
            raise UsageError("DISTAUCTION_SEED must be an integer") from None
    if "DISTAUCTION_OUTPUT_DIR" in os.environ:
        cfg.output_dir = os.environ["DISTAUCTION_OUTPUT_DIR"]
    return cfg


def _prepare_output(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    out = _prepare_output(cfg)
    params = cfg.params()
    rounds_data = []
    aborted_rounds = 0
    for r in range(cfg.rounds):
        inst = gen_instance(params, cfg.seed + r)
        t0 = time.perf_counter()
        res = gametheory.run_framework(
            inst,
            cfg.seed + r,
            policy=cfg.policy,
            max_delay=cfg.max_delay,
            turn_budget=cfg.turn_budget,
        )
        duration = time.perf_counter() - t0
        phases = [
            {"blocks": list(ids), "completed_at_move": move}
            for ids, move in res.machines[0].phase_log
        ]
        is_abort = res.outcome.is_abort
        if is_abort:
            aborted_rounds += 1
        rounds_data.append(
            {
                "round": r,
                "seed": cfg.seed + r,
                "outcome": "abort" if is_abort else "solution",
                "turns": res.world.turn,
                "messages_sent": res.world.sent_count,
                "messages_delivered": res.world.delivered_count,
                "duration_seconds": duration,
                "phases": phases,
                "result": json.loads(outcome_json(res.outcome)),
            }
        )
    report = {
        "command": "simulate",
        "kind": cfg.kind,
        "m": cfg.m,
        "n": cfg.n,
        "k": cfg.k,
        "rounds": cfg.rounds,
        "seed": cfg.seed,
        "aborted_rounds": aborted_rounds,
        "rounds_data": rounds_data,
    }
    (out / "simulate_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with (out / "simulate_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "seed", "outcome", "turns", "messages_sent", "duration_seconds"])
        for row in rounds_data:
            writer.writerow(
                [row["round"], row["seed"], row["outcome"], row["turns"],
                 row["messages_sent"], f"{row['duration_seconds']:.6f}"]
            )
    print(f"simulate: {cfg.rounds} rounds, {aborted_rounds} aborted, reports in {out}")
    # all-honest runs must not abort; any abort signals a protocol failure
    return 1 if aborted_rounds else 0


# ---------------------------------------------------------------------------
# bench


def _payments_chunk_job(payload):
    """Worker entry point: VCG payments for one chunk of users."""
    from .core import Bid
    from .fixedpoint import FP as _FP

    values, demands, caps_raw, solver, ls_iterations, coin, assign, users = payload
    bids = BidVector(
        tuple(Bid(i, _FP(values[i]), _FP(demands[i])) for i in range(len(values))),
        None,
    )
    capacities = tuple(_FP(c) for c in caps_raw)
    cfg = StandardAuctionConfig(solver=solver, ls_iterations=ls_iterations)
    from .allocators import _assignment_to_allocation

    alloc = _assignment_to_allocation(list(assign), bids, len(capacities))
    return [
        (i, vcg_payment(bids, capacities, cfg, coin, alloc, i).raw) for i in users
    ]


def _bench_instance(n: int, m: int, seed: int, ls_iterations: int) -> Instance:
    params = InstanceParams(
        kind="standard", m=m, n=n, k=0,
        solver="local-search", ls_iterations=ls_iterations,
    )
    return gen_instance(params, seed)


def _bench_once(inst: Instance, procs: int, coin: int) -> float:
    """One timed allocate-plus-payments pass split over `procs` workers."""
    spec = inst.spec
    bids = inst.bids
    t0 = time.perf_counter()
    alloc = standard_auction_allocate(bids, spec.capacities, spec.config, coin)
    assign = []
    for i in range(bids.n):
        row = next((j for j in range(spec.m) if alloc.quantities[j][i].raw > 0), -1)
        assign.append(row)
    chunks = [list(range(g, bids.n, procs)) for g in range(procs)]
    payload_base = (
        [b.unit_value.raw for b in bids.user_bids],
        [b.demand.raw for b in bids.user_bids],
        [c.raw for c in spec.capacities],
        spec.config.solver,
        spec.config.ls_iterations,
        coin,
        tuple(assign),
    )
    if procs == 1:
        _payments_chunk_job(payload_base + (chunks[0],))
    else:
        with ProcessPoolExecutor(max_workers=procs) as pool:
            jobs = [payload_base + (chunk,) for chunk in chunks if chunk]
            list(pool.map(_payments_chunk_job, jobs))
    return time.perf_counter() - t0


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    out = _prepare_output(cfg)
    procs_list = [int(p) for p in args.procs.split(",")]
    if any(p < 1 for p in procs_list):
        raise UsageError("--procs entries must be positive")
    sizes = [int(s) for s in args.sizes.split(",")]
    if any(s < 1 for s in sizes):
        raise UsageError("--sizes entries must be positive")
    host_threads = os.cpu_count() or 1
    warnings = []
    for p in procs_list:
        if p > host_threads:
            msg = (
                f"warning: requested parallelism {p} exceeds host threads "
                f"{host_threads}; speedup figures are not meaningful"
            )
            warnings.append(msg)
            print(msg, file=sys.stderr)

    rows = []
    for n in sizes:
        inst = _bench_instance(n, cfg.m, cfg.seed, args.ls_iterations)
        timings = {}
        for p in procs_list:
            reps = [
                _bench_once(inst, p, cfg.seed + rep) for rep in range(args.repetitions)
            ]
            timings[p] = statistics.median(reps)
        base = timings.get(1)
        for p in procs_list:
            speedup = (base / timings[p]) if base else float("nan")
            rows.append(
                {
                    "n": n,
                    "procs": p,
                    "median_seconds": timings[p],
                    "speedup_vs_sequential": speedup,
                }
            )
    report = {
        "command": "bench",
        "host_threads": host_threads,
        "warnings": warnings,
        "ls_iterations": args.ls_iterations,
        "repetitions": args.repetitions,
        "rows": rows,
    }
    (out / "bench_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with (out / "bench_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "procs", "median_seconds", "speedup_vs_sequential"])
        for row in rows:
            writer.writerow(
                [row["n"], row["procs"], f"{row['median_seconds']:.6f}",
                 f"{row['speedup_vs_sequential']:.3f}"]
            )
    for row in rows:
        print(
            f"bench: n={row['n']} procs={row['procs']} "
            f"median={row['median_seconds']:.3f}s "
            f"speedup={row['speedup_vs_sequential']:.2f}x"
        )
    return 0


# ---------------------------------------------------------------------------
# check


def cmd_check(cfg: ExperimentConfig, args) -> int:
    out = _prepare_output(cfg)
    params = cfg.params()
    verdicts = {}

    instances = [gen_instance(params, cfg.seed + i) for i in range(cfg.instances)]
    sim = gametheory.check_correct_simulation(instances, run_seed=cfg.seed)
    verdicts["correct_simulation"] = {"ok": sim.ok, "total": sim.total, "failures": sim.failures}

    validity = gametheory.check_bid_agreement_validity(instances[:5], run_seed=cfg.seed)
    verdicts["bid_agreement_validity"] = {
        "ok": validity.ok, "total": validity.total, "failures": validity.failures,
    }

    safety = gametheory.check_abort_safety(instances[:10], run_seed=cfg.seed)
    verdicts["abort_safety"] = {"ok": safety.ok, "total": safety.total, "failures": safety.failures}

    coin_ok, coin_p, _ = gametheory.check_coin_uniformity(
        cfg.m, runs=cfg.coin_runs, seed0=cfg.seed
    )
    verdicts["coin_uniformity"] = {"ok": coin_ok, "p_value": coin_p}

    coin_contract = gametheory.check_coin_abort_contract(cfg.m, seed0=cfg.seed)
    verdicts["coin_abort_contract"] = {
        "ok": coin_contract.ok, "failures": coin_contract.failures,
    }

    transfer = gametheory.check_transfer_abort_contract(cfg.m, seed0=cfg.seed)
    verdicts["transfer_abort_contract"] = {"ok": transfer.ok, "failures": transfer.failures}

    if cfg.kind == "standard":
        truth = gametheory.check_bidder_truthfulness(n=3, m=min(cfg.m, 2))
        verdicts["bidder_truthfulness"] = {
            "ok": truth.ok, "total": truth.total, "failures": truth.failures[:20],
        }

    eq_inst = gen_equilibrium_instance(params, cfg.seed)
    resilience = gametheory.check_k_resilience(
        eq_inst,
        cfg.k,
        samples=cfg.samples,
        tolerance=cfg.tolerance,
        seed0=cfg.seed,
        policy=cfg.policy,
        max_delay=cfg.max_delay,
    )
    verdicts["k_resilience"] = json.loads(resilience.to_json())
    (out / "equilibrium_table.txt").write_text(resilience.render_table())

    mutations = gametheory.run_mutation_suite(seed=cfg.seed)
    verdicts["mutation_suite"] = mutations

    all_ok = all(
        v.get("ok", True) for v in verdicts.values() if isinstance(v, dict)
    ) and all(m["detected"] and m["clean_ok"] for m in mutations.values())

    report = {"command": "check", "ok": all_ok, "verdicts": verdicts}
    (out / "check_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with (out / "check_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "ok"])
        for name, v in verdicts.items():
            if name == "mutation_suite":
                for mut, r in v.items():
                    writer.writerow([f"mutation:{mut}", r["detected"]])
            else:
                writer.writerow([name, v.get("ok", True)])
    for name, v in verdicts.items():
        if name == "mutation_suite":
            for mut, r in v.items():
                status = "caught" if r["detected"] else "MISSED"
                print(f"check: mutation {mut}: {status}")
        else:
            status = "pass" if v.get("ok", True) else "FAIL"
            print(f"check: {name}: {status}")
    print(f"check: overall {'pass' if all_ok else 'FAIL'}; reports in {out}")
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# oracle-compare


def cmd_oracle_compare(cfg: ExperimentConfig, args) -> int:
    out = _prepare_output(cfg)
    params = cfg.params()
    mismatches = []
    rows = []
    for r in range(cfg.rounds):
        inst = gen_instance(params, cfg.seed + r)
        res = gametheory.run_framework(
            inst,
            cfg.seed + r,
            policy=cfg.policy,
            max_delay=cfg.max_delay,
            turn_budget=cfg.turn_budget,
        )
        machine = res.machines[0]
        coin = machine.coin_values[0] if machine.coin_values else 0
        alloc, payments = local_execute(machine.agreed, inst.spec, coin)
        expected = Outcome.solution(alloc, payments)
        match = all(
            outcome_bytes(o) == outcome_bytes(expected) for o in res.outputs
        )
        if not match:
            mismatches.append(r)
        rows.append({"round": r, "seed": cfg.seed + r, "match": match})
    report = {
        "command": "oracle-compare",
        "kind": cfg.kind,
        "rounds": cfg.rounds,
        "mismatches": mismatches,
        "rows": rows,
    }
    (out / "oracle_compare_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True)
    )
    with (out / "oracle_compare_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "seed", "match"])
        for row in rows:
            writer.writerow([row["round"], row["seed"], row["match"]])
    print(
        f"oracle-compare: {cfg.rounds} rounds, {len(mismatches)} mismatches; "
        f"reports in {out}"
    )
    return 1 if mismatches else 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distauction",
        description="Simulate and audit distributed resource-allocation auctions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("simulate", "run full framework rounds and report outcomes"),
        ("check", "run the game-theoretic and protocol check suite"),
        ("oracle-compare", "compare simulated runs against the reference executor"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--rounds", type=int, help="override the round count")
        p.add_argument("--output", help="override the output directory")

    b = sub.add_parser("bench", help="measure allocator throughput and speedup")
    b.add_argument("--config", help="INI experiment config")
    b.add_argument("--seed", type=int, help="override the base seed")
    b.add_argument("--output", help="override the output directory")
    b.add_argument("--sizes", default="40", help="comma-separated user counts")
    b.add_argument("--procs", default="1,2,4", help="comma-separated worker counts")
    b.add_argument("--ls-iterations", dest="ls_iterations", type=int, default=20000,
                   help="local-search iterations per solve")
    b.add_argument("--repetitions", type=int, default=3, help="timed repetitions per cell")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "check": cmd_check,
    "oracle-compare": cmd_oracle_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if getattr(args, "rounds", None) is not None:
            cfg.rounds = args.rounds
        if getattr(args, "output", None) is not None:
            cfg.output_dir = args.output
        cfg.validate()
        return _COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
