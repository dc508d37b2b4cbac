"""Deterministic turn-based simulator for asynchronous message-passing protocols.

One provider moves per turn: it receives a schedule-chosen subset of its
pending messages (every message is delivered within max_delay of the
recipient's moves), computes, and sends. The entire run is a pure function
of (machines, schedule seed).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import List, Optional

POLICIES = ("round-robin-with-permutation", "random-fair")


class LivenessError(RuntimeError):
    """An all-honest run failed to terminate: a protocol bug."""


@dataclass(frozen=True, slots=True)
class Envelope:
    src: int
    dst: int
    tag: tuple
    payload: bytes


@dataclass(frozen=True, slots=True)
class Schedule:
    seed: int
    policy: str = "round-robin-with-permutation"
    max_delay: int = 2

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown schedule policy {self.policy!r}")
        if self.max_delay < 1:
            raise ValueError("max_delay must be positive")


def gen_fair_schedule(
    seed: int,
    m: int,
    policy: str = "round-robin-with-permutation",
    max_delay: int = 2,
) -> Schedule:
    """Build a fair schedule: every provider moves once per round of m turns."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return Schedule(seed=seed, policy=policy, max_delay=max_delay)


@dataclass(slots=True)
class Delivery:
    turn: int
    env: Envelope


class World:
    """Mutable simulation state: machines, in-flight messages, turn counter.

    Machines implement ``on_move(delivered) -> [Envelope]`` and expose an
    ``output`` attribute (None until decided, write-once) plus an ``honest``
    flag used by the liveness check.
    """

    def __init__(self, machines: list, schedule: Schedule, record_log: bool = True):
        self.machines = machines
        self.schedule = schedule
        self.record_log = record_log
        self.m = len(machines)
        self.turn = 0
        self._rng = random.Random(schedule.seed)
        # per-recipient lists of [envelope, moves_until_delivery]
        self._pending: List[list] = [[] for _ in range(self.m)]
        self._inflight = 0
        self._order: List[int] = []
        if schedule.policy == "round-robin-with-permutation":
            self._fixed_order = self._rng.sample(range(self.m), self.m)
        else:
            self._fixed_order = None
        self.delivery_log: List[Delivery] = []
        self.sent_count = 0
        self.delivered_count = 0

    # -- scheduling -------------------------------------------------------

    def _next_mover(self) -> int:
        if not self._order:
            if self._fixed_order is not None:
                self._order = list(reversed(self._fixed_order))
            else:
                self._order = self._rng.sample(range(self.m), self.m)[::-1]
        return self._order.pop()

    # -- execution --------------------------------------------------------

    def step(self) -> bool:
        """Advance one turn. Returns True if the move made observable progress."""
        j = self._next_mover()
        queue = self._pending[j]
        delivered = []
        remaining = []
        for entry in queue:
            entry[1] -= 1
            if entry[1] <= 0:
                delivered.append(entry[0])
            else:
                remaining.append(entry)
        self._pending[j] = remaining
        self._inflight -= len(delivered)
        self.delivered_count += len(delivered)
        if self.record_log:
            for env in delivered:
                self.delivery_log.append(Delivery(self.turn, env))

        machine = self.machines[j]
        had_output = machine.output is not None
        sends = machine.on_move(delivered)
        for env in sends:
            if not 0 <= env.dst < self.m:
                raise ValueError(f"envelope to unknown provider {env.dst}")
            delay = self._rng.randint(1, self.schedule.max_delay)
            self._pending[env.dst].append([env, delay])
        self._inflight += len(sends)
        self.sent_count += len(sends)
        self.turn += 1
        produced_output = machine.output is not None and not had_output
        return bool(delivered) or bool(sends) or produced_output

    def all_done(self) -> bool:
        return all(machine.output is not None for machine in self.machines)

    def run(self, turn_budget: int) -> list:
        """Step until every machine produced an output or no progress is possible.

        Returns the list of per-provider outputs (None where a machine was
        cut off by the budget or by quiescence; callers score those as abort).
        Raises LivenessError if an all-honest run fails to finish.
        """
        if turn_budget <= 0:
            raise ValueError("turn_budget must be positive")
        idle_moves = 0
        while self.turn < turn_budget and not self.all_done():
            progressed = self.step()
            if progressed:
                idle_moves = 0
            else:
                idle_moves += 1
                # Machines act only on delivery; an empty network plus a full
                # silent round cannot make progress later.
                if self._inflight == 0 and idle_moves >= self.m:
                    break
        if not self.all_done() and all(mc.honest for mc in self.machines):
            raise LivenessError(
                f"all-honest run stalled at turn {self.turn} "
                f"(budget {turn_budget}, in-flight {self._inflight})"
            )
        return [machine.output for machine in self.machines]


def step(world: World, schedule: Optional[Schedule] = None) -> World:
    world.step()
    return world


def run(world: World, schedule: Optional[Schedule] = None, turn_budget: int = 10**6):
    outputs = world.run(turn_budget)
    return outputs, world.delivery_log


def transcript_jsonl(world: World) -> str:
    """Ordered delivery log as JSON lines for replay and audit."""
    lines = []
    for d in world.delivery_log:
        lines.append(
            json.dumps(
                {
                    "turn": d.turn,
                    "from": d.env.src,
                    "to": d.env.dst,
                    "tag": list(d.env.tag),
                    "payload_sha256": hashlib.sha256(d.env.payload).hexdigest(),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines)


def transcript_digest(world: World) -> str:
    return hashlib.sha256(transcript_jsonl(world).encode()).hexdigest()
