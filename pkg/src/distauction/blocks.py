"""Protocol building blocks, each a state machine pluggable into simnet.

Every block either produces a valid value or the abort value BOT. Blocks
are driven by StagedMachine, which sequences them inside one provider and
routes envelopes by block id.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional

from .core import (
    BidVector,
    STREAM_BITS,
    STREAM_BYTES,
    decode_bid,
    decode_provider_bid,
    encode_bid,
    encode_provider_bid,
    stream_from_bytes,
    stream_to_bytes,
)
from .fixedpoint import FP, SCALE
from .simnet import Envelope


class _Bot:
    __slots__ = ()

    def __repr__(self):
        return "BOT"


BOT = _Bot()

_COIN_DOMAIN = b"distauction.coin.v1:"


# ---------------------------------------------------------------------------
# deviation hook surface (honest defaults; the gametheory module subclasses)


class Strategy:
    """Per-provider behavior overrides; the base class follows the protocol."""

    name = "honest"

    def transform_input(self, pid: int, bids: BidVector, rng) -> BidVector:
        return bids

    def transform_sends(self, pid: int, stage: str, sends: List[Envelope], rng):
        return sends

    def coin_commit_raw(self, pid: int, rng) -> Optional[int]:
        return None

    def coin_reveal(self, pid: int, salt: bytes, raw: int, rng):
        return salt, raw

    def transform_task_result(self, pid: int, task: str, value, rng):
        return value

    def transform_output(self, pid: int, outcome, rng):
        return outcome


HONEST = Strategy()


# ---------------------------------------------------------------------------
# bit combination rule shared by consensus and bid agreement


def combine_bits(bits: List[int]) -> int:
    """Majority bit; a tie resolves to the parity of the bit sum."""
    count = sum(bits)
    double = 2 * count
    if double > len(bits):
        return 1
    if double < len(bits):
        return 0
    return count & 1


def combine_streams(streams: List[int], width: int = STREAM_BITS) -> int:
    """Positionwise combine_bits over equal-length bit streams."""
    first = streams[0]
    if all(s == first for s in streams):
        return first
    out = 0
    for pos in range(width):
        if combine_bits([(s >> pos) & 1 for s in streams]):
            out |= 1 << pos
    return out


# ---------------------------------------------------------------------------
# block base class and provider driver


class Block:
    """One block instance at one provider. Emits envelopes tagged by block id."""

    def __init__(self, block_id: str, pid: int, m: int):
        self.block_id = block_id
        self.pid = pid
        self.m = m
        self.done = False
        self.result = None

    def _finish(self, result) -> None:
        self.done = True
        self.result = result

    def _bcast(self, phase: str, payload: bytes) -> List[Envelope]:
        tag = (self.block_id, phase)
        return [
            Envelope(self.pid, q, tag, payload)
            for q in range(self.m)
            if q != self.pid
        ]

    def start(self) -> List[Envelope]:
        raise NotImplementedError

    def on_message(self, env: Envelope) -> List[Envelope]:
        raise NotImplementedError


class StagedMachine:
    """A simnet machine that advances through a pipeline of block stages.

    A stage is a list of blocks advanced concurrently (envelopes are routed
    to blocks by id); the stage completes when all its blocks are done.
    Subclasses implement first_stage() and next_stage(); either may set
    self.output to terminate the pipeline.
    """

    def __init__(self, pid: int, m: int, strategy: Strategy = HONEST, rng=None):
        self.pid = pid
        self.m = m
        self.strategy = strategy
        self.rng = rng
        self.honest = strategy is HONEST or strategy.name == "honest"
        self.output = None
        self.phase_log: List[tuple] = []  # (stage ids, completed-at-local-move)
        self._moves = 0
        self._active: Dict[str, Block] = {}
        self._buffers: Dict[str, list] = defaultdict(list)
        self._started = False

    def first_stage(self) -> Optional[List[Block]]:
        raise NotImplementedError

    def next_stage(self, finished: List[Block]) -> Optional[List[Block]]:
        raise NotImplementedError

    def on_move(self, delivered: List[Envelope]) -> List[Envelope]:
        self._moves += 1
        for env in delivered:
            self._buffers[env.tag[0]].append(env)
        sends: List[Envelope] = []
        if not self._started:
            self._started = True
            stage = self.first_stage()
            if stage:
                self._install(stage, sends)
        while self._active and self.output is None:
            for block in self._active.values():
                buf = self._buffers.get(block.block_id)
                while buf and not block.done:
                    sends.extend(block.on_message(buf.pop(0)))
            if not all(block.done for block in self._active.values()):
                break
            finished = list(self._active.values())
            self.phase_log.append((tuple(self._active), self._moves))
            for bid in self._active:
                self._buffers.pop(bid, None)
            self._active = {}
            nxt = self.next_stage(finished)
            if nxt:
                self._install(nxt, sends)
        if sends:
            grouped: Dict[str, list] = defaultdict(list)
            for env in sends:
                grouped[env.tag[0]].append(env)
            out: List[Envelope] = []
            for stage_id, envs in grouped.items():
                out.extend(self.strategy.transform_sends(self.pid, stage_id, envs, self.rng))
            return out
        return sends

    def _install(self, stage: List[Block], sends: List[Envelope]) -> None:
        for block in stage:
            self._active[block.block_id] = block
            sends.extend(block.start())


# ---------------------------------------------------------------------------
# rational consensus (stand-in for a black-box rational consensus protocol):
# broadcast the input bit, echo the received bit vector, abort on any
# equivocation, otherwise decide by combine_bits.


class ConsensusBitBlock(Block):
    def __init__(self, block_id: str, pid: int, m: int, input_bit: int):
        super().__init__(block_id, pid, m)
        if input_bit not in (0, 1):
            raise ValueError("consensus input must be 0 or 1")
        self.input_bit = input_bit
        self._views: Dict[int, int] = {}
        self._echoes: Dict[int, tuple] = {}
        self._echo_sent = False

    def start(self) -> List[Envelope]:
        self._views[self.pid] = self.input_bit
        return self._bcast("b", bytes([self.input_bit]))

    def on_message(self, env: Envelope) -> List[Envelope]:
        sends: List[Envelope] = []
        phase = env.tag[1]
        if phase == "b":
            self._views.setdefault(env.src, env.payload[0] & 1)
        elif phase == "e":
            self._echoes.setdefault(env.src, tuple(env.payload))
        if not self._echo_sent and len(self._views) == self.m:
            self._echo_sent = True
            vector = bytes(self._views[q] for q in range(self.m))
            self._echoes[self.pid] = tuple(vector)
            sends.extend(self._bcast("e", vector))
        if self._echo_sent and len(self._echoes) == self.m and not self.done:
            self._decide()
        return sends

    def _decide(self) -> None:
        for s in range(self.m):
            copies = {self._echoes[q][s] for q in range(self.m)}
            copies.add(self._views[s])
            if len(copies) > 1:
                self._finish(BOT)
                return
        self._finish(combine_bits([self._views[q] for q in range(self.m)]))


class _SingleBlockMachine(StagedMachine):
    def __init__(self, pid, m, make_block, strategy=HONEST, rng=None):
        super().__init__(pid, m, strategy, rng)
        self._make_block = make_block

    def first_stage(self):
        return [self._make_block(self.pid)]

    def next_stage(self, finished):
        self.output = finished[0].result
        return None


def consensus_machines(input_bits: List[int], strategies: Optional[dict] = None):
    """Build one ConsensusBitBlock machine per provider for a simnet run."""
    m = len(input_bits)
    strategies = strategies or {}
    machines = []
    for pid in range(m):
        strat = strategies.get(pid, HONEST)
        machines.append(
            _SingleBlockMachine(
                pid,
                m,
                lambda p, b=input_bits[pid]: ConsensusBitBlock("rc", p, m, b),
                strategy=strat,
            )
        )
    return machines


def rational_consensus(input_bits: List[int], schedule, turn_budget: int = 10**5):
    """Run one consensus instance among all-honest providers; returns outputs."""
    from .simnet import World

    world = World(consensus_machines(input_bits), schedule)
    return world.run(turn_budget)


# ---------------------------------------------------------------------------
# bid agreement: one logical consensus instance per (bidder, bit position),
# transported in bundled per-provider messages


def encode_bid_streams(bids: BidVector) -> List[int]:
    """Per-bidder bit streams (users first, then providers when double).

    A bid whose fields overflow the wire width is replaced by the neutral
    bid before encoding.
    """
    from .core import EncodingError, neutral_bid, neutral_provider_bid

    streams = []
    for b in bids.user_bids:
        try:
            streams.append(encode_bid(b))
        except EncodingError:
            streams.append(encode_bid(neutral_bid(b.bidder_id)))
    if bids.provider_bids is not None:
        for pb in bids.provider_bids:
            try:
                streams.append(encode_provider_bid(pb))
            except EncodingError:
                streams.append(encode_provider_bid(neutral_provider_bid(pb.provider_id)))
    return streams


def decode_bid_streams(streams: List[int], n_users: int, n_providers: Optional[int]) -> BidVector:
    users = tuple(decode_bid(streams[i], i) for i in range(n_users))
    providers = None
    if n_providers is not None:
        providers = tuple(
            decode_provider_bid(streams[n_users + j], j) for j in range(n_providers)
        )
    return BidVector(users, providers)


def _pack_streams(streams: List[int]) -> bytes:
    return b"".join(stream_to_bytes(s) for s in streams)


def _unpack_streams(blob: bytes, count: int) -> List[int]:
    return [
        stream_from_bytes(blob[i * STREAM_BYTES : (i + 1) * STREAM_BYTES])
        for i in range(count)
    ]


class BidAgreementBlock(Block):
    """Agree on one bid per bidder from possibly differing local vectors.

    Logically runs STREAM_BITS consensus instances per bidder; messages for
    all instances of a phase are bundled into one envelope per peer.
    """

    def __init__(self, block_id: str, pid: int, m: int, bids: BidVector):
        super().__init__(block_id, pid, m)
        self.n_users = bids.n
        self.n_provider_bidders = (
            len(bids.provider_bids) if bids.provider_bids is not None else None
        )
        self._count = self.n_users + (self.n_provider_bidders or 0)
        self._my_blob = _pack_streams(encode_bid_streams(bids))
        self._views: Dict[int, bytes] = {}
        self._echoes: Dict[int, bytes] = {}
        self._echo_sent = False

    def start(self) -> List[Envelope]:
        self._views[self.pid] = self._my_blob
        return self._bcast("b", self._my_blob)

    def on_message(self, env: Envelope) -> List[Envelope]:
        sends: List[Envelope] = []
        phase = env.tag[1]
        if phase == "b":
            self._views.setdefault(env.src, env.payload)
        elif phase == "e":
            self._echoes.setdefault(env.src, env.payload)
        if not self._echo_sent and len(self._views) == self.m:
            self._echo_sent = True
            echo = b"".join(self._views[q] for q in range(self.m))
            self._echoes[self.pid] = echo
            sends.extend(self._bcast("e", echo))
        if self._echo_sent and len(self._echoes) == self.m and not self.done:
            self._decide()
        return sends

    def _decide(self) -> None:
        size = self._count * STREAM_BYTES
        # Equivocation check: every provider must have broadcast the same
        # blob to all peers; any per-bit instance conflict shows up here.
        for s in range(self.m):
            reference = self._views[s]
            for q in range(self.m):
                echoed = self._echoes[q][s * size : (s + 1) * size]
                if echoed != reference:
                    self._finish(BOT)
                    return
        per_provider = [_unpack_streams(self._views[q], self._count) for q in range(self.m)]
        combined = [
            combine_streams([per_provider[q][i] for q in range(self.m)])
            for i in range(self._count)
        ]
        self._finish(decode_bid_streams(combined, self.n_users, self.n_provider_bidders))


# ---------------------------------------------------------------------------
# input validation: broadcast and compare


class InputValidationBlock(Block):
    def __init__(self, block_id: str, pid: int, m: int, value_bytes: bytes,
                 skip_validation: bool = False):
        super().__init__(block_id, pid, m)
        self._value = value_bytes
        self._seen: Dict[int, bytes] = {}
        self._skip = skip_validation

    def start(self) -> List[Envelope]:
        if self._skip:  # planted-bug mutation: accept without cross-checking
            self._finish(True)
            return []
        self._seen[self.pid] = self._value
        return self._bcast("v", self._value)

    def on_message(self, env: Envelope) -> List[Envelope]:
        self._seen.setdefault(env.src, env.payload)
        if len(self._seen) == self.m and not self.done:
            if all(v == self._value for v in self._seen.values()):
                self._finish(True)
            else:
                self._finish(BOT)
        return []


# ---------------------------------------------------------------------------
# common coin: hash commitments, reveals, sum modulo 1, inverse-CDF transform


@dataclass(frozen=True)
class DistributionSpec:
    """Target distribution for the common coin."""

    kind: str  # "uniform01" | "discrete" | "uniform_int"
    weights: Optional[tuple] = None  # FP weights summing to 1 (discrete)
    span: Optional[int] = None  # uniform_int range [0, span)

    def __post_init__(self):
        if self.kind == "discrete":
            if not self.weights:
                raise ValueError("discrete distribution requires weights")
            if sum(w.raw for w in self.weights) != SCALE:
                raise ValueError("weights must sum to 1 exactly in fixed point")
        elif self.kind == "uniform_int":
            if not self.span or self.span < 1:
                raise ValueError("uniform_int requires a positive span")
        elif self.kind != "uniform01":
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def transform(self, u: FP):
        """Inverse-CDF transform of a uniform [0,1) fixed-point value."""
        if self.kind == "uniform01":
            return u
        if self.kind == "uniform_int":
            return (u.raw * self.span) >> 20
        cum = 0
        for idx, w in enumerate(self.weights):
            cum += w.raw
            if u.raw < cum:
                return idx
        return len(self.weights) - 1


@dataclass(frozen=True)
class CoinCommitment:
    digest: bytes
    salt: Optional[bytes] = None
    revealed_raw: Optional[int] = None


def coin_digest(block_id: str, pid: int, salt: bytes, raw: int) -> bytes:
    h = hashlib.sha256()
    h.update(_COIN_DOMAIN)
    h.update(block_id.encode())
    h.update(bytes([pid]))
    h.update(salt)
    h.update(raw.to_bytes(8, "little"))
    return h.digest()


def coin_output_from_reveals(raws: List[int], dist: DistributionSpec):
    total = sum(raws) % SCALE
    return dist.transform(FP(total))


class CommonCoinBlock(Block):
    def __init__(self, block_id: str, pid: int, m: int, dist: DistributionSpec,
                 rng, strategy: Strategy = HONEST,
                 skip_range_check: bool = False):
        super().__init__(block_id, pid, m)
        self.dist = dist
        self._rng = rng
        self._strategy = strategy
        self._skip_range_check = skip_range_check
        self._commits: Dict[int, bytes] = {}
        self._reveals: Dict[int, tuple] = {}
        self._revealed = False
        self._salt = b""
        self._raw = 0

    def start(self) -> List[Envelope]:
        raw = self._strategy.coin_commit_raw(self.pid, self._rng)
        if raw is None:
            raw = self._rng.randrange(SCALE)
        self._raw = raw
        self._salt = self._rng.getrandbits(128).to_bytes(16, "little")
        digest = coin_digest(self.block_id, self.pid, self._salt, raw)
        self._commits[self.pid] = digest
        return self._bcast("c", digest)

    def on_message(self, env: Envelope) -> List[Envelope]:
        sends: List[Envelope] = []
        phase = env.tag[1]
        if phase == "c":
            self._commits.setdefault(env.src, env.payload)
        elif phase == "r":
            salt, raw = env.payload[:16], int.from_bytes(env.payload[16:24], "little")
            self._reveals.setdefault(env.src, (salt, raw))
        if not self._revealed and len(self._commits) == self.m:
            self._revealed = True
            reveal = self._strategy.coin_reveal(self.pid, self._salt, self._raw, self._rng)
            if reveal is not None:
                salt, raw = reveal
                self._reveals[self.pid] = (salt, raw)
                sends.extend(self._bcast("r", salt + raw.to_bytes(8, "little")))
            # a withheld reveal stalls honest peers; they abort at the budget
        if self._revealed and len(self._reveals) == self.m and not self.done:
            self._decide()
        return sends

    def _decide(self) -> None:
        raws = []
        for q in range(self.m):
            salt, raw = self._reveals[q]
            if coin_digest(self.block_id, q, salt, raw) != self._commits[q]:
                self._finish(BOT)
                return
            if not self._skip_range_check and raw > SCALE:
                self._finish(BOT)
                return
            raws.append(raw)
        self._finish(coin_output_from_reveals(raws, self.dist))


# ---------------------------------------------------------------------------
# data transfer: senders broadcast; receivers abort on conflicting copies


@dataclass(frozen=True)
class TransferSpec:
    senders: FrozenSet[int]
    receivers: FrozenSet[int]
    domain: str = "bytes"


NOT_PARTICIPATING = object()


class DataTransferBlock(Block):
    def __init__(self, block_id: str, pid: int, m: int, spec: TransferSpec,
                 value_bytes: Optional[bytes],
                 accept_single_sender: bool = False):
        super().__init__(block_id, pid, m)
        self.spec = spec
        self._value = value_bytes
        self._received: Dict[int, bytes] = {}
        self._accept_single = accept_single_sender

    def start(self) -> List[Envelope]:
        sends: List[Envelope] = []
        if self.pid in self.spec.senders:
            if self._value is None:
                raise ValueError("sender without an input value")
            tag = (self.block_id, "d")
            sends = [
                Envelope(self.pid, q, tag, self._value)
                for q in self.spec.receivers
                if q != self.pid
            ]
            if self.pid in self.spec.receivers:
                self._accept(self.pid, self._value)
        if self.pid not in self.spec.receivers and not self.done:
            self._finish(NOT_PARTICIPATING)
        return sends

    def on_message(self, env: Envelope) -> List[Envelope]:
        if env.src in self.spec.senders and self.pid in self.spec.receivers:
            self._accept(env.src, env.payload)
        return []

    def _accept(self, src: int, payload: bytes) -> None:
        if self.done:
            return
        self._received.setdefault(src, payload)
        if self._accept_single:  # planted-bug mutation: trust the first copy
            self._finish(payload)
            return
        if len(self._received) == len(self.spec.senders):
            values = set(self._received.values())
            if len(values) == 1:
                self._finish(values.pop())
            else:
                self._finish(BOT)
