#!/usr/bin/env python3
"""
Tests for the threshold randomness beacon and its mock stand-in.

Pairing checks in py_ecc are slow, so the threshold tests share one small
DKG group per module.
"""

import itertools

import pytest

from beacon_bft.beacon import (
    BeaconOutput,
    MockBeacon,
    PartialSignature,
    SecretShare,
    ThresholdBeacon,
    aggregate,
    default_threshold,
    dkg_run,
    interpolate_at_zero,
    mock_beacon,
    mock_group,
    partial_sign,
    round_message,
    transcript,
    verify_output,
    verify_partial,
    vss_verify_share,
)
from beacon_bft.encoding import sha256
from beacon_bft.errors import InsufficientSharesError, ParameterError


@pytest.fixture(scope="module")
def group_and_shares():
    return dkg_run(4, 3, rng_seed=7)


def test_round_message_is_fixed_width():
    assert round_message(0)[-8:] == bytes(8)
    assert round_message(1)[-8:] == (1).to_bytes(8, "big")
    assert len(round_message(0)) == len(round_message(2 ** 64 - 1))
    with pytest.raises(ParameterError):
        round_message(-1)
    with pytest.raises(ParameterError):
        round_message(2 ** 64)


def test_default_threshold_is_majority():
    assert default_threshold(5) == 3
    assert default_threshold(4) == 3
    assert default_threshold(1) == 1


def test_dkg_rejects_bad_threshold():
    with pytest.raises(ParameterError):
        dkg_run(3, 0, rng_seed=1)
    with pytest.raises(ParameterError):
        dkg_run(3, 4, rng_seed=1)


def test_dkg_shares_pass_feldman_check(group_and_shares):
    group, shares = group_and_shares
    assert group.n == 4 and group.t == 3
    assert group.qualified == (1, 2, 3, 4)
    assert all(vss_verify_share(s, group.commitments) for s in shares)


def test_any_t_shares_interpolate_the_same_secret(group_and_shares):
    _, shares = group_and_shares
    assert interpolate_at_zero(shares[:3]) == interpolate_at_zero(shares[1:])
    assert interpolate_at_zero([shares[0], shares[2], shares[3]]) == interpolate_at_zero(shares[:3])


def test_aggregate_is_independent_of_signer_subset(group_and_shares):
    group, shares = group_and_shares
    partials = [partial_sign(s, 5) for s in shares]
    first = aggregate(partials[:3], group)
    second = aggregate(partials[1:], group)
    assert first.signature == second.signature
    assert first.randomness == sha256(first.signature)
    assert verify_output(first, group)


def test_aggregate_needs_t_valid_partials(group_and_shares):
    group, shares = group_and_shares
    partials = [partial_sign(s, 6) for s in shares[:2]]
    with pytest.raises(InsufficientSharesError) as excinfo:
        aggregate(partials, group)
    assert excinfo.value.threshold == 3
    with pytest.raises(InsufficientSharesError):
        aggregate([], group)


def test_invalid_partial_is_dropped(group_and_shares):
    group, shares = group_and_shares
    good = [partial_sign(s, 8) for s in shares[:3]]
    forged = PartialSignature(4, 8, partial_sign(shares[0], 8).signature)
    assert not verify_partial(forged, group)

    out = aggregate([forged] + good, group)
    assert verify_output(out, group)

    with pytest.raises(InsufficientSharesError):
        aggregate([forged] + good[:2], group)


def test_tampered_output_fails_verification(group_and_shares):
    group, shares = group_and_shares
    out = aggregate([partial_sign(s, 9) for s in shares[:3]], group)
    wrong_randomness = BeaconOutput(out.round, out.signature, bytes(32))
    wrong_round = BeaconOutput(out.round + 1, out.signature, out.randomness)
    assert not verify_output(wrong_randomness, group)
    assert not verify_output(wrong_round, group)


def test_faulty_dealer_is_disqualified():
    group, shares = dkg_run(4, 2, rng_seed=3, faulty_dealers=[2])
    assert 2 not in group.qualified
    assert group.qualified == (1, 3, 4)
    assert all(vss_verify_share(s, group.commitments) for s in shares)


def test_threshold_service_caches_and_transcribes():
    beacon = ThresholdBeacon.create(3, None, seed=1)
    assert beacon.group.t == 2
    assert beacon.output(0) is beacon.output(0)
    records = transcript(beacon, 2)
    assert [r["round"] for r in records] == [0, 1]
    for record in records:
        assert beacon.verify(BeaconOutput.from_json(record))


def test_mock_beacon_is_deterministic_and_verifiable():
    a, b = mock_beacon(42, 3), mock_beacon(42, 3)
    assert a == b
    assert a.randomness != mock_beacon(42, 4).randomness
    assert a.randomness != mock_beacon(43, 3).randomness
    assert verify_output(a, mock_group(42))
    assert not verify_output(a, mock_group(43))


def test_mock_output_survives_json():
    service = MockBeacon(5)
    out = BeaconOutput.from_json(service.output(11).to_json())
    assert out.mock
    assert service.verify(out)


def test_mock_output_does_not_verify_under_threshold_group(group_and_shares):
    group, _ = group_and_shares
    assert not verify_output(mock_beacon(0, 1), group)


@pytest.fixture(scope="module")
def group_of_five():
    return dkg_run(5, 3, rng_seed=11)


def test_every_three_of_five_subset_aggregates_identically(group_of_five):
    group, shares = group_of_five
    partials = [partial_sign(s, 2) for s in shares]
    outputs = {aggregate(list(subset), group) for subset in itertools.combinations(partials, 3)}
    assert len(outputs) == 1
    (out,) = outputs
    assert verify_output(out, group)


def test_fewer_than_t_shares_miss_the_group_secret(group_of_five):
    _, shares = group_of_five
    secret = interpolate_at_zero(shares[:3])
    for subset in itertools.combinations(shares, 3):
        assert interpolate_at_zero(subset) == secret
    for subset in itertools.combinations(shares, 2):
        assert interpolate_at_zero(subset) != secret


def test_shares_do_not_verify_against_another_group(group_and_shares, group_of_five):
    group, _ = group_and_shares
    _, other_shares = group_of_five
    assert not any(vss_verify_share(s, group.commitments) for s in other_shares[:4])
    assert not vss_verify_share(SecretShare(0, other_shares[0].value), group.commitments)


def test_partials_verify_only_at_their_own_index(group_of_five):
    group, shares = group_of_five
    partials = [partial_sign(s, 3) for s in shares]
    for i, partial in enumerate(partials, start=1):
        for j in range(1, group.n + 1):
            claimed = PartialSignature(j, partial.round, partial.signature)
            assert verify_partial(claimed, group) == (i == j)


def test_aggregate_follows_the_majority_round(group_of_five):
    group, shares = group_of_five
    stray = partial_sign(shares[4], 99)
    good = [partial_sign(s, 4) for s in shares[:3]]

    out = aggregate([stray] + good, group)
    assert out.round == 4
    assert verify_output(out, group)

    explicit = aggregate([stray] + good, group, round_number=4)
    assert explicit == out
    with pytest.raises(InsufficientSharesError):
        aggregate([stray] + good, group, round_number=99)


@pytest.mark.slow
def test_rounds_get_distinct_signatures(group_of_five):
    group, shares = group_of_five
    secret = SecretShare(0, interpolate_at_zero(shares[:3]))
    signatures = {partial_sign(secret, r).signature for r in range(101)}
    assert len(signatures) == 101
    assert aggregate([partial_sign(s, 7) for s in shares[:3]], group).signature == \
        partial_sign(secret, 7).signature
