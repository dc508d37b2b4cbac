"""Domain types, bid encoding, and canonical serialization."""

import random

import pytest
from hypothesis import given, strategies as st

from distauction.core import (
    ABORT,
    Allocation,
    Bid,
    BidVector,
    Outcome,
    PaymentVector,
    ProviderBid,
    STREAM_BITS,
    StructuralError,
    bidvector_bytes,
    bidvector_json,
    check_feasible,
    decode_bid,
    decode_provider_bid,
    encode_bid,
    encode_provider_bid,
    neutral_bid,
    outcome_bytes,
    outcome_json,
    social_welfare,
    stream_from_bytes,
    stream_to_bytes,
    utility,
    zero_allocation,
)
from distauction.fixedpoint import FP, ONE, ZERO, fp

RAW64 = st.integers(min_value=0, max_value=2**64 - 1)


def test_bid_invariants():
    with pytest.raises(ValueError):
        Bid(0, fp("1"), ZERO)  # non-neutral needs demand
    with pytest.raises(ValueError):
        Bid(0, fp("1"), fp("1"), neutral=True)  # neutral forbids demand
    assert neutral_bid(3).neutral


def test_bidvector_dense_indexing():
    with pytest.raises(StructuralError):
        BidVector((Bid(1, fp("1"), fp("1")),))


def test_stream_length():
    assert STREAM_BITS == 129


def test_encode_decode_examples():
    bid = Bid(5, fp("1.25"), fp("0.5"))
    stream = encode_bid(bid)
    assert stream & ((1 << 64) - 1) == fp("1.25").raw
    assert (stream >> 64) & ((1 << 64) - 1) == fp("0.5").raw
    assert stream >> 128 == 0
    assert decode_bid(stream, 5) == bid

    neutral = neutral_bid(2)
    assert decode_bid(encode_bid(neutral), 2) == neutral


@given(RAW64, st.integers(min_value=1, max_value=2**64 - 1))
def test_bid_roundtrip(value, demand):
    bid = Bid(0, FP(value), FP(demand))
    assert decode_bid(encode_bid(bid), 0) == bid


@given(st.integers(min_value=0, max_value=2**STREAM_BITS - 1))
def test_decode_always_yields_valid_bid(stream):
    bid = decode_bid(stream, 7)
    assert bid.bidder_id == 7
    assert bid.neutral == (bid.demand.raw == 0)


def test_decode_repairs_invalid_streams_to_neutral():
    # neutral flag set with nonzero fields
    assert decode_bid((1 << 128) | 5, 0).neutral
    # zero demand without neutral flag
    assert decode_bid(7, 0).neutral


def test_decode_fuzz_never_raises():
    rng = random.Random(0)
    for _ in range(10_000):
        stream = rng.getrandbits(STREAM_BITS)
        decode_bid(stream, 0)
        decode_provider_bid(stream, 0)


@given(RAW64, RAW64)
def test_provider_bid_roundtrip(cost, cap):
    pb = ProviderBid(0, FP(cost), FP(cap))
    assert decode_provider_bid(encode_provider_bid(pb), 0) == pb


def test_stream_bytes_roundtrip():
    stream = (1 << 128) | (12345 << 64) | 678
    assert stream_from_bytes(stream_to_bytes(stream)) == stream


def _double_fixture():
    users = (Bid(0, fp("1.2"), fp("1")), Bid(1, fp("0.8"), fp("1")))
    providers = (ProviderBid(0, fp("0.3"), fp("0.6")), ProviderBid(1, fp("0.5"), fp("2")))
    return BidVector(users, providers)


def test_social_welfare_double():
    bids = _double_fixture()
    alloc = Allocation(((fp("0.6"), ZERO), (fp("0.4"), ZERO)))
    # 1.2 * 1.0 - (0.3 * 0.6 + 0.5 * 0.4) on the grid
    expected = (
        fp("0.6") * fp("1.2") + fp("0.4") * fp("1.2")
        - fp("0.3") * fp("0.6") - fp("0.5") * fp("0.4")
    )
    assert social_welfare(alloc, bids) == expected


def test_utility_abort_is_zero():
    bids = _double_fixture()
    assert utility("user", 0, ABORT, bids) == ZERO
    assert utility("provider", 1, ABORT, bids) == ZERO


def test_utility_solution():
    bids = _double_fixture()
    alloc = Allocation(((ONE, ZERO), (ZERO, ZERO)))
    pay = PaymentVector((fp("0.8"), ZERO), (fp("0.5"), ZERO))
    out = Outcome.solution(alloc, pay)
    assert utility("user", 0, out, bids) == fp("1.2") - fp("0.8")
    # provider 0: paid 0.5, cost 0.3 * 1.0
    assert utility("provider", 0, out, bids) == fp("0.5") - fp("0.3")
    assert utility("provider", 1, out, bids) == ZERO


def test_check_feasible():
    bids = _double_fixture()
    ok = Allocation(((fp("0.6"), ZERO), (fp("0.4"), ZERO)))
    assert check_feasible(ok, bids)
    over_capacity = Allocation(((fp("0.7"), ZERO), (ZERO, ZERO)))
    assert not check_feasible(over_capacity, bids)
    over_demand = Allocation(((fp("0.6"), ZERO), (fp("0.6"), ZERO)))
    assert not check_feasible(over_demand, bids)


def test_serialization_is_injective_and_stable():
    bids = _double_fixture()
    blob = bidvector_bytes(bids)
    assert blob == bidvector_bytes(_double_fixture())
    other = BidVector(
        (Bid(0, fp("1.2"), fp("1")), Bid(1, fp("0.8"), fp("0.5"))),
        bids.provider_bids,
    )
    assert blob != bidvector_bytes(other)


def test_outcome_bytes():
    assert outcome_bytes(ABORT) == b"ABORT"
    alloc = zero_allocation(2, 2)
    pay = PaymentVector((ZERO, ZERO), (ZERO, ZERO))
    sol = Outcome.solution(alloc, pay)
    assert outcome_bytes(sol).startswith(b"SOL")
    assert outcome_bytes(sol) == outcome_bytes(Outcome.solution(alloc, pay))


def test_json_exports_parse():
    import json

    bids = _double_fixture()
    doc = json.loads(bidvector_json(bids))
    assert doc["users"][0]["unit_value"] == fp("1.2").decimal()
    assert json.loads(outcome_json(ABORT)) == {"outcome": "abort"}


def test_payments_nonnegative():
    with pytest.raises(ValueError):
        PaymentVector((FP(-1),), ())
