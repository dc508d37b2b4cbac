"""Domain types for resource-allocation auctions and pure functions over them.

Everything here is a value type: immutable, hashable, safe to share across
threads. Canonical byte serialization is the basis for hashing, commitments
and cross-provider equality checks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from .fixedpoint import FIELD_MAX, FP, ZERO, fp_sum

STREAM_BITS = 2 * 64 + 1  # value field, demand field, neutral flag
STREAM_BYTES = (STREAM_BITS + 7) // 8

_U64_MASK = (1 << 64) - 1


class StructuralError(ValueError):
    """Dimension or index mismatch between values that must line up."""


class EncodingError(ValueError):
    """A bid field does not fit the fixed 64-bit wire width."""


@dataclass(frozen=True, slots=True)
class Bid:
    """A user's declared unit value and bandwidth demand.

    A neutral bid excludes the bidder from the auction and always carries
    zero demand.
    """

    bidder_id: int
    unit_value: FP
    demand: FP
    neutral: bool = False

    def __post_init__(self):
        if self.unit_value.raw < 0 or self.demand.raw < 0:
            raise ValueError("bid fields must be nonnegative")
        if self.neutral and self.demand.raw != 0:
            raise ValueError("neutral bid must have zero demand")
        if not self.neutral and self.demand.raw == 0:
            raise ValueError("non-neutral bid must have positive demand")


def neutral_bid(bidder_id: int) -> Bid:
    return Bid(bidder_id, ZERO, ZERO, neutral=True)


@dataclass(frozen=True, slots=True)
class ProviderBid:
    """A provider's declared unit cost and capacity (double auctions only)."""

    provider_id: int
    unit_cost: FP
    capacity: FP

    def __post_init__(self):
        if self.unit_cost.raw < 0 or self.capacity.raw < 0:
            raise ValueError("provider bid fields must be nonnegative")


def neutral_provider_bid(provider_id: int) -> ProviderBid:
    return ProviderBid(provider_id, ZERO, ZERO)


@dataclass(frozen=True, slots=True)
class BidVector:
    """All bids of one auction instance; provider bids only when double."""

    user_bids: tuple
    provider_bids: Optional[tuple] = None

    def __post_init__(self):
        for i, b in enumerate(self.user_bids):
            if b.bidder_id != i:
                raise StructuralError("user bids must be densely indexed")
        if self.provider_bids is not None:
            for j, b in enumerate(self.provider_bids):
                if b.provider_id != j:
                    raise StructuralError("provider bids must be densely indexed")

    @property
    def n(self) -> int:
        return len(self.user_bids)

    @property
    def is_double(self) -> bool:
        return self.provider_bids is not None


@dataclass(frozen=True, slots=True)
class Allocation:
    """m x n matrix; entry (j, i) is the amount of user i served at provider j."""

    quantities: tuple  # tuple of m rows, each a tuple of n FP

    @property
    def m(self) -> int:
        return len(self.quantities)

    @property
    def n(self) -> int:
        return len(self.quantities[0]) if self.quantities else 0

    def user_total(self, i: int) -> FP:
        return fp_sum(row[i] for row in self.quantities)

    def provider_total(self, j: int) -> FP:
        return fp_sum(self.quantities[j])


def zero_allocation(m: int, n: int) -> Allocation:
    row = (ZERO,) * n
    return Allocation(tuple(row for _ in range(m)))


@dataclass(frozen=True, slots=True)
class PaymentVector:
    user_payments: tuple
    provider_payments: tuple

    def __post_init__(self):
        for p in self.user_payments + self.provider_payments:
            if p.raw < 0:
                raise ValueError("payments must be nonnegative")


@dataclass(frozen=True, slots=True)
class Outcome:
    """Either a Solution(allocation, payments) or the abort value."""

    allocation: Optional[Allocation]
    payments: Optional[PaymentVector]

    @classmethod
    def solution(cls, allocation: Allocation, payments: PaymentVector) -> "Outcome":
        return cls(allocation, payments)

    @classmethod
    def abort(cls) -> "Outcome":
        return cls(None, None)

    @property
    def is_abort(self) -> bool:
        return self.allocation is None


ABORT = Outcome.abort()


# ---------------------------------------------------------------------------
# welfare / utility / feasibility


def social_welfare(alloc: Allocation, bids: BidVector) -> FP:
    """Total user value of the allocation, minus provider value when double."""
    if alloc.n != bids.n:
        raise StructuralError("allocation/bid dimension mismatch")
    if bids.is_double and alloc.m != len(bids.provider_bids):
        raise StructuralError("allocation/provider dimension mismatch")
    total = ZERO
    for j, row in enumerate(alloc.quantities):
        for i, q in enumerate(row):
            total = total + q * bids.user_bids[i].unit_value
    if bids.is_double:
        for j, row in enumerate(alloc.quantities):
            cost = bids.provider_bids[j].unit_cost
            for q in row:
                total = total - q * cost
    return total


def utility(role: str, idx: int, outcome: Outcome, bids: BidVector) -> FP:
    """Utility of a user or provider for an outcome; abort yields zero."""
    if outcome.is_abort:
        return ZERO
    alloc, pay = outcome.allocation, outcome.payments
    if role == "user":
        value = ZERO
        unit = bids.user_bids[idx].unit_value
        for row in alloc.quantities:
            value = value + row[idx] * unit
        return value - pay.user_payments[idx]
    if role == "provider":
        received = pay.provider_payments[idx]
        if bids.is_double:
            cost = bids.provider_bids[idx].unit_cost
            for q in alloc.quantities[idx]:
                received = received - q * cost
        return received
    raise ValueError(f"unknown role {role!r}")


def check_feasible(
    alloc: Allocation,
    bids: BidVector,
    capacities: Optional[Sequence[FP]] = None,
) -> bool:
    """True iff no user demand and no provider capacity is exceeded.

    Capacities come from the provider bids for double auctions, or must be
    supplied explicitly for standard auctions.
    """
    if alloc.n != bids.n:
        raise StructuralError("allocation/bid dimension mismatch")
    if capacities is None:
        if not bids.is_double:
            raise StructuralError("standard auction requires explicit capacities")
        capacities = [pb.capacity for pb in bids.provider_bids]
    if alloc.m != len(capacities):
        raise StructuralError("allocation/capacity dimension mismatch")
    for row in alloc.quantities:
        for q in row:
            if q.raw < 0:
                return False
    for j, row in enumerate(alloc.quantities):
        if fp_sum(row).raw > capacities[j].raw:
            return False
    for i, bid in enumerate(bids.user_bids):
        if alloc.user_total(i).raw > bid.demand.raw:
            return False
    return True


# ---------------------------------------------------------------------------
# bid <-> bit stream encoding

def encode_bid(bid: Bid) -> int:
    """Encode a bid as a STREAM_BITS-long bit stream (LSB-first int).

    Bits 0..63 carry the raw unit value, bits 64..127 the raw demand, and
    bit 128 the neutral flag. Injective on valid bids.
    """
    if bid.unit_value.raw > FIELD_MAX or bid.demand.raw > FIELD_MAX:
        raise EncodingError("bid field exceeds 64-bit width")
    stream = bid.unit_value.raw | (bid.demand.raw << 64)
    if bid.neutral:
        stream |= 1 << 128
    return stream


def decode_bid(stream: int, bidder_id: int) -> Bid:
    """Decode a stream; anything violating the Bid invariants maps to neutral."""
    if stream < 0 or stream >> STREAM_BITS:
        raise EncodingError("stream must be STREAM_BITS long")
    value = stream & _U64_MASK
    demand = (stream >> 64) & _U64_MASK
    is_neutral = bool(stream >> 128)
    if is_neutral and (value != 0 or demand != 0):
        return neutral_bid(bidder_id)
    if not is_neutral and demand == 0:
        return neutral_bid(bidder_id)
    if is_neutral:
        return neutral_bid(bidder_id)
    return Bid(bidder_id, FP(value), FP(demand))


def encode_provider_bid(bid: ProviderBid) -> int:
    if bid.unit_cost.raw > FIELD_MAX or bid.capacity.raw > FIELD_MAX:
        raise EncodingError("provider bid field exceeds 64-bit width")
    return bid.unit_cost.raw | (bid.capacity.raw << 64)


def decode_provider_bid(stream: int, provider_id: int) -> ProviderBid:
    if stream < 0 or stream >> STREAM_BITS:
        raise EncodingError("stream must be STREAM_BITS long")
    if stream >> 128:
        return neutral_provider_bid(provider_id)
    cost = stream & _U64_MASK
    capacity = (stream >> 64) & _U64_MASK
    return ProviderBid(provider_id, FP(cost), FP(capacity))


def stream_to_bytes(stream: int) -> bytes:
    return stream.to_bytes(STREAM_BYTES, "little")


def stream_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "little")


# ---------------------------------------------------------------------------
# canonical serialization (length-prefixed little-endian raw integers)

_NO_PROVIDERS = 0xFFFFFFFF


def _pack_u64(raw: int) -> bytes:
    if raw < 0 or raw > FIELD_MAX:
        raise EncodingError("value out of unsigned 64-bit range")
    return struct.pack("<Q", raw)


def bidvector_bytes(bids: BidVector) -> bytes:
    out = [b"BV1", struct.pack("<I", bids.n)]
    m = _NO_PROVIDERS if bids.provider_bids is None else len(bids.provider_bids)
    out.append(struct.pack("<I", m))
    for b in bids.user_bids:
        out.append(_pack_u64(b.unit_value.raw))
        out.append(_pack_u64(b.demand.raw))
        out.append(b"\x01" if b.neutral else b"\x00")
    if bids.provider_bids is not None:
        for pb in bids.provider_bids:
            out.append(_pack_u64(pb.unit_cost.raw))
            out.append(_pack_u64(pb.capacity.raw))
    return b"".join(out)


def allocation_bytes(alloc: Allocation) -> bytes:
    out = [b"AL1", struct.pack("<II", alloc.m, alloc.n)]
    for row in alloc.quantities:
        for q in row:
            out.append(_pack_u64(q.raw))
    return b"".join(out)


def payments_bytes(pay: PaymentVector) -> bytes:
    out = [b"PV1", struct.pack("<II", len(pay.user_payments), len(pay.provider_payments))]
    for p in pay.user_payments:
        out.append(_pack_u64(p.raw))
    for p in pay.provider_payments:
        out.append(_pack_u64(p.raw))
    return b"".join(out)


def outcome_bytes(outcome: Outcome) -> bytes:
    if outcome.is_abort:
        return b"ABORT"
    return b"SOL" + allocation_bytes(outcome.allocation) + payments_bytes(outcome.payments)


def bidvector_json(bids: BidVector) -> str:
    """JSON export mirroring the canonical bytes, with decimal strings."""
    doc = {
        "users": [
            {
                "bidder_id": b.bidder_id,
                "unit_value": b.unit_value.decimal(),
                "demand": b.demand.decimal(),
                "neutral": b.neutral,
            }
            for b in bids.user_bids
        ]
    }
    if bids.provider_bids is not None:
        doc["providers"] = [
            {
                "provider_id": pb.provider_id,
                "unit_cost": pb.unit_cost.decimal(),
                "capacity": pb.capacity.decimal(),
            }
            for pb in bids.provider_bids
        ]
    return json.dumps(doc, sort_keys=True)


def outcome_json(outcome: Outcome) -> str:
    if outcome.is_abort:
        return json.dumps({"outcome": "abort"})
    alloc = outcome.allocation
    pay = outcome.payments
    doc = {
        "outcome": "solution",
        "allocation": [[q.decimal() for q in row] for row in alloc.quantities],
        "user_payments": [p.decimal() for p in pay.user_payments],
        "provider_payments": [p.decimal() for p in pay.provider_payments],
    }
    return json.dumps(doc, sort_keys=True)
