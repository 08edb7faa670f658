#!/usr/bin/env python3
"""
Tests for credential issuance, admission and epoch transitions.
"""

import itertools

import pytest

from beacon_bft.errors import AdmissionError, AdmissionReason
from beacon_bft.membership import (
    Credential,
    Issuer,
    Roster,
    admit,
    advance_epoch,
    compute_nullifier,
    issue_credential,
    required_quorum,
    verify_credential,
)
from beacon_bft.signing import KeyPair, SignatureScheme


def node_key(label: str) -> bytes:
    return KeyPair.from_seed(SignatureScheme.ED25519, label.encode()).public_key


@pytest.fixture
def issuer():
    return Issuer.generate("passport-office", seed=1)


@pytest.fixture
def genesis():
    return Roster.from_public_keys([node_key(f"genesis-{i}") for i in range(4)])


def test_same_identity_gives_same_nullifier(issuer):
    a = issue_credential(issuer, b"alice", node_key("k1"))
    b = issue_credential(issuer, b"alice", node_key("k2"))
    assert a.nullifier == b.nullifier
    assert a.node_public_key != b.node_public_key


def test_distinct_identities_never_collide():
    nullifiers = {compute_nullifier("issuer", f"identity-{i}".encode()) for i in range(10_000)}
    assert len(nullifiers) == 10_000


def test_nullifier_depends_on_issuer():
    assert compute_nullifier("a", b"x") != compute_nullifier("b", b"x")


def test_credential_verifies_under_issuer_key(issuer):
    cred = issue_credential(issuer, b"bob", node_key("bob"))
    assert verify_credential(cred, [issuer]) is None
    assert verify_credential(cred, {issuer.issuer_id: issuer.verification_key}) is None


def test_admit_fresh_credential(issuer, genesis):
    cred = issue_credential(issuer, b"carol", node_key("carol"))
    roster = admit(genesis, cred, [issuer])
    assert roster.size == genesis.size + 1
    assert roster.epoch == genesis.epoch
    assert cred.nullifier in roster.nullifier_set
    assert roster.members[-1].node_id == 4
    assert roster.public_key(4) == cred.node_public_key


def test_same_nullifier_new_key_is_sybil(issuer, genesis):
    roster = admit(genesis, issue_credential(issuer, b"dave", node_key("dave-1")), [issuer])
    with pytest.raises(AdmissionError) as excinfo:
        admit(roster, issue_credential(issuer, b"dave", node_key("dave-2")), [issuer])
    assert excinfo.value.reason is AdmissionReason.SYBIL


def test_unknown_issuer_is_untrusted(issuer, genesis):
    rogue = Issuer.generate("rogue", seed=9)
    cred = issue_credential(rogue, b"eve", node_key("eve"))
    with pytest.raises(AdmissionError) as excinfo:
        admit(genesis, cred, [issuer])
    assert excinfo.value.reason is AdmissionReason.UNTRUSTED_ISSUER


def test_forged_signature_is_rejected(issuer, genesis):
    cred = issue_credential(issuer, b"frank", node_key("frank"))
    forged = Credential(cred.issuer_id, cred.nullifier, node_key("mallory"), cred.signature)
    with pytest.raises(AdmissionError) as excinfo:
        admit(genesis, forged, [issuer])
    assert excinfo.value.reason is AdmissionReason.FORGERY


def test_member_key_cannot_be_reused(issuer, genesis):
    cred = issue_credential(issuer, b"grace", genesis.public_key(0))
    with pytest.raises(AdmissionError) as excinfo:
        admit(genesis, cred, [issuer])
    assert excinfo.value.reason is AdmissionReason.DUPLICATE_KEY


def test_empty_epoch_only_advances_counter(issuer, genesis):
    roster, report = advance_epoch(genesis, [], [], [issuer])
    assert roster.epoch == genesis.epoch + 1
    assert roster.members == genesis.members
    assert report.admitted == () and report.removed == ()


def test_three_joins_one_leave(issuer, genesis):
    joins = [issue_credential(issuer, f"joiner-{i}".encode(), node_key(f"joiner-{i}")) for i in range(3)]
    roster, report = advance_epoch(genesis, joins, [1], [issuer])
    assert roster.size == 6
    assert 1 not in roster
    assert report.removed == (1,)
    assert len(report.admitted) == 3
    # the departed node's nullifier stays recorded
    assert genesis.member(1).nullifier in roster.nullifier_set


def test_duplicate_nullifier_in_batch_admits_smallest_key(issuer, genesis):
    keys = [node_key(f"twin-{i}") for i in range(3)]
    joins = [issue_credential(issuer, b"twin", k) for k in keys]
    roster, report = advance_epoch(genesis, joins, [], [issuer])
    assert roster.size == genesis.size + 1
    assert roster.members[-1].public_key == min(keys)
    assert len(report.skipped) == 2
    assert {reason for _, reason in report.skipped} == {AdmissionReason.SYBIL}


def test_join_order_does_not_matter(issuer, genesis):
    joins = [issue_credential(issuer, f"p-{i % 3}".encode(), node_key(f"p-{i}")) for i in range(5)]
    results = {advance_epoch(genesis, list(order), [2], [issuer])[0]
               for order in itertools.permutations(joins)}
    assert len(results) == 1


def test_unknown_leave_is_reported(issuer, genesis):
    roster, report = advance_epoch(genesis, [], [99], [issuer])
    assert report.unknown_leaves == (99,)
    assert roster.size == genesis.size


def test_identity_may_rejoin_with_new_key(issuer, genesis):
    cred = issue_credential(issuer, b"heidi", node_key("heidi-1"))
    roster = admit(genesis, cred, [issuer])
    node_id = roster.members[-1].node_id
    roster, _ = advance_epoch(roster, [], [node_id], [issuer])
    roster = admit(roster, issue_credential(issuer, b"heidi", node_key("heidi-2")), [issuer])
    assert roster.members[-1].public_key == node_key("heidi-2")


def test_rejoin_refused_when_policy_forbids(issuer):
    strict = Roster(allow_rejoin=False)
    roster = admit(strict, issue_credential(issuer, b"ivan", node_key("ivan-1")), [issuer])
    roster, _ = advance_epoch(roster, [], [0], [issuer])
    with pytest.raises(AdmissionError) as excinfo:
        admit(roster, issue_credential(issuer, b"ivan", node_key("ivan-2")), [issuer])
    assert excinfo.value.reason is AdmissionReason.SYBIL


def test_roster_snapshot_json(issuer, genesis):
    roster = admit(genesis, issue_credential(issuer, b"judy", node_key("judy")), [issuer])
    data = roster.to_json()
    assert set(data) >= {"epoch", "members", "nullifiers"}
    assert data["members"][0]["id"] == 0
    assert Roster.from_json(data) == roster


def test_required_quorum():
    assert required_quorum(4) == 3
    assert required_quorum(7) == 5
    assert required_quorum(31) == 21
    assert required_quorum(1) == 1
