#!/usr/bin/env python3
"""
Tests for the trace checkers, fairness statistics and metrics.
"""

import json
from collections import Counter

import pytest

from beacon_bft.analysis import (
    check_delays,
    check_liveness,
    check_safety,
    commit_bound,
    commit_latencies,
    compute_metrics,
    election_trace,
    fairness_report,
    streak_runs,
    view_leaders,
)
from beacon_bft.config import Scenario, load_scenario
from beacon_bft.consensus import form_certificate
from beacon_bft.membership import Roster
from beacon_bft.messages import GENESIS_DIGEST, BlockProposal, Phase, Vote, vote_message
from beacon_bft.signing import KeyPair, SignatureScheme


def header(n=4, f=1, keys=None, **scenario):
    keys = keys or [KeyPair.from_seed(SignatureScheme.ED25519, f"k{i}".encode()) for i in range(n)]
    return {
        "time": 0.0, "node": None, "event": "roster", "height": 0, "view": 0, "digest": "",
        "n": n, "f": f, "quorum": Roster.from_public_keys([k.public_key for k in keys]).quorum,
        "scheme": "ed25519",
        "members": [{"id": i, "pubkey_hex": k.public_key.hex()} for i, k in enumerate(keys)],
        "scenario": Scenario(n=n, f=f, **scenario).to_json(),
    }


def commit(node, height, digest, time=1.0, view=0, **extra):
    event = {"time": time, "node": node, "event": "commit", "height": height, "view": view, "digest": digest}
    event.update(extra)
    return event


def enter(node, view, height, time, leader, timeout=4.0):
    return {"time": time, "node": node, "event": "enter_view", "height": height, "view": view,
            "digest": "", "leader": leader, "timeout": timeout}


def end(time):
    return {"time": time, "node": None, "event": "end", "height": 0, "view": 0, "digest": ""}


# -- safety --------------------------------------------------------------------

def test_agreeing_commits_are_safe():
    trace = [header()] + [commit(i, 0, "aa") for i in range(4)] + [end(5.0)]
    assert check_safety(trace) == []


def test_conflicting_honest_commits_are_a_fork():
    trace = [header(), commit(0, 0, "aa"), commit(1, 0, "bb"), commit(2, 1, "cc"), end(5.0)]
    violations = check_safety(trace)
    assert [v["kind"] for v in violations] == ["fork"]
    assert violations[0]["height"] == 0
    assert violations[0]["digests"] == {"aa": [0], "bb": [1]}


def test_corrupt_commits_are_ignored():
    corrupt = {"time": 0.0, "node": 3, "event": "corrupt", "height": -1, "view": 0, "digest": "",
               "policy": "equivocate"}
    trace = [header(), corrupt, commit(0, 0, "aa"), commit(3, 0, "bb"), end(5.0)]
    assert check_safety(trace) == []


def test_logged_certificates_are_verified():
    keys = [KeyPair.from_seed(SignatureScheme.ED25519, f"k{i}".encode()) for i in range(4)]
    roster = Roster.from_public_keys([k.public_key for k in keys])
    block = BlockProposal(height=0, view=0, parent_digest=GENESIS_DIGEST, payload=(), proposer=0)
    message = vote_message(Phase.COMMIT, block.digest, 0, 0)
    votes = [Vote(i, Phase.COMMIT, block.digest, 0, 0, keys[i].sign(message)) for i in range(3)]
    cert = form_certificate(votes, roster)

    good = commit(0, 0, block.digest.hex(), cert=cert.encode().hex(), block=block.encode().hex())
    assert check_safety([header(keys=keys), good, end(2.0)]) == []

    other = bytes(32).hex()
    bad = commit(1, 0, other, cert=cert.encode().hex())
    violations = check_safety([header(keys=keys), good, bad, end(2.0)])
    assert [v["kind"] for v in violations] == ["bad_certificate", "fork"]
    assert violations[0]["node"] == 1


# -- liveness ------------------------------------------------------------------

def test_commit_bound():
    assert commit_bound(1.0, 4.0) == 8.0
    assert commit_bound(0.5, 8.0) == 7.0


def test_honest_view_that_commits_in_time_passes():
    trace = [header(gst=0.0, rounds=5)]
    trace += [enter(i, 0, 0, 0.0, leader=0) for i in range(4)]
    trace += [commit(i, 0, "aa", time=3.0) for i in range(4)]
    trace.append(end(20.0))
    assert check_liveness(trace) == []


def test_honest_view_without_commit_is_a_stall():
    trace = [header(gst=0.0, rounds=5)]
    trace += [enter(i, 0, 0, 0.0, leader=0) for i in range(4)]
    trace += [commit(i, 0, "aa", time=3.0) for i in range(3)]
    trace.append(end(20.0))
    stalls = check_liveness(trace)
    assert len(stalls) == 1
    assert stalls[0]["missing"] == [3]
    assert stalls[0]["deadline"] == pytest.approx(8.0)


def test_views_outside_the_guarantee_are_skipped():
    corrupt = {"time": 0.0, "node": 0, "event": "corrupt", "height": -1, "view": 0, "digest": "",
               "policy": "crash"}
    # corrupt leader
    trace = [header(gst=0.0, rounds=5), corrupt] + [enter(i, 0, 0, 0.0, leader=0) for i in range(1, 4)]
    assert check_liveness(trace + [end(20.0)]) == []
    # entered before GST
    trace = [header(gst=10.0, rounds=5)] + [enter(i, 0, 0, 5.0, leader=1) for i in range(4)]
    assert check_liveness(trace + [end(40.0)]) == []
    # deadline after the end of the run
    trace = [header(gst=0.0, rounds=5)] + [enter(i, 0, 0, 0.0, leader=1) for i in range(4)]
    assert check_liveness(trace + [end(5.0)]) == []
    # entries spread wider than timeout - 2 delta
    trace = [header(gst=0.0, rounds=5)] + [enter(i, 0, 0, float(i), leader=1) for i in range(4)]
    assert check_liveness(trace + [end(40.0)]) == []


def test_delay_contract():
    trace = [header(gst=10.0, delta=1.0)]
    trace.append({"time": 10.5, "node": 1, "event": "deliver", "sender": 0, "sent": 2.0, "height": 0,
                  "view": None, "digest": "", "delay": 8.5, "kind": "Vote"})
    trace.append({"time": 12.0, "node": 2, "event": "deliver", "sender": 0, "sent": 11.5, "height": 0,
                  "view": None, "digest": "", "delay": 0.5, "kind": "Vote"})
    assert check_delays(trace) == []
    trace.append({"time": 11.5, "node": 2, "event": "deliver", "sender": 1, "sent": 3.0, "height": 0,
                  "view": None, "digest": "", "delay": 8.5, "kind": "Vote"})
    trace.append({"time": 14.0, "node": 3, "event": "deliver", "sender": 1, "sent": 12.0, "height": 0,
                  "view": None, "digest": "", "delay": 2.0, "kind": "Vote"})
    assert [v["recipient"] for v in check_delays(trace)] == [2, 3]


# -- fairness ------------------------------------------------------------------

def test_streak_runs():
    assert streak_runs([]) == Counter()
    assert streak_runs([True, True, False, True, False, False, True, True, True]) == Counter({2: 1, 1: 1, 3: 1})


def test_view_leaders_keeps_first_record_per_view():
    trace = [enter(0, 1, 0, 0.0, leader=2), enter(1, 0, 0, 0.0, leader=3), enter(2, 1, 0, 1.0, leader=2)]
    assert view_leaders(trace) == {0: 3, 1: 2}


def test_election_trace_is_reproducible(fixtures_dir):
    scenario = load_scenario(str(fixtures_dir / "fairness_n9.json"), environ={})
    a = election_trace(scenario, 50)
    assert a == election_trace(scenario, 50)
    assert len([e for e in a if e["event"] == "corrupt"]) == 3
    assert len(view_leaders(a)) == 50


def test_fairness_over_ten_thousand_views(fixtures_dir):
    scenario = load_scenario(str(fixtures_dir / "fairness_n9.json"), environ={})
    report = fairness_report(election_trace(scenario, 10_000))
    assert report.views == 10_000
    assert not report.underpowered
    assert sum(report.counts.values()) == 10_000
    assert len(report.malicious) == 3
    assert report.malicious_expected == pytest.approx(1 / 3)
    assert abs(report.malicious_frequency - 1 / 3) * report.views <= 3 * report.malicious_sigma
    assert report.p_value > 0.01
    assert [s.length for s in report.streaks] == [1, 2, 3]
    assert report.streaks[2].blocks == 3333
    assert report.streaks[2].expected == pytest.approx(3333 / 27)
    data = json.loads(json.dumps(report.to_json()))
    assert data["views"] == 10_000


def test_short_trace_is_underpowered(fixtures_dir):
    scenario = load_scenario(str(fixtures_dir / "fairness_n9.json"), environ={})
    report = fairness_report(election_trace(scenario, 20), min_views=1000)
    assert report.underpowered
    assert report.passed is None


# -- metrics -------------------------------------------------------------------

def test_metrics_from_hand_built_trace():
    trace = [header(gst=0.0, rounds=1)]
    trace += [enter(i, 0, 0, 0.0, leader=0) for i in range(4)]
    trace.append({"time": 0.5, "node": 0, "event": "propose", "height": 0, "view": 0, "digest": "aa"})
    trace += [commit(i, 0, "aa", time=1.5 + i * 0.5) for i in range(4)]
    trace.append({"time": 4.0, "node": None, "event": "end", "height": 1, "view": 0, "digest": "",
                  "messages_sent": 42, "stop_reason": "rounds"})
    assert commit_latencies(trace) == [1.0, 1.5, 2.0, 2.5]
    m = compute_metrics(trace)
    assert m.commits == 1 and m.max_height == 1
    assert m.latency_mean == pytest.approx(1.75)
    assert m.latency_max == pytest.approx(2.5)
    assert m.views == 1
    assert m.leader_histogram == {0: 1}
    assert m.messages_sent == 42
    assert m.stop_reason == "rounds"
    assert m.passed


def test_metrics_row_is_flat():
    trace = [header(), enter(0, 0, 0, 0.0, leader=1), end(1.0)]
    row = compute_metrics(trace).to_row()
    assert json.loads(row["leader_histogram"]) == {"1": 1}
    assert all(not isinstance(v, (dict, list)) for v in row.values())
