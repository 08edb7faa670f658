"""
Post-hoc checks and statistics over simulation traces.

Everything here reads the trace only; replica self-reports are never
trusted. A node counts as honest when the trace holds no corruption
record for it.
"""

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import stats

from .config import Scenario
from .consensus import elect_leader, verify_certificate
from .membership import NodeId, Roster
from .messages import BlockProposal, Phase, QuorumCertificate

logger = logging.getLogger(__name__)

Trace = Sequence[Mapping[str, Any]]

DEFAULT_MIN_VIEWS = 1000
MAX_STREAK = 3
SIGMAS = 3.0
CHI2_ALPHA = 0.01
TIME_EPSILON = 1e-9


# -- trace helpers ---------------------------------------------------------------

def trace_header(trace: Trace) -> Optional[Mapping[str, Any]]:
    for event in trace:
        if event.get("event") == "roster":
            return event
    return None


def roster_from_trace(trace: Trace) -> Optional[Roster]:
    header = trace_header(trace)
    if header is None:
        return None
    members = sorted(header["members"], key=lambda m: m["id"])
    return Roster.from_public_keys([bytes.fromhex(m["pubkey_hex"]) for m in members])


def scenario_from_trace(trace: Trace) -> Scenario:
    header = trace_header(trace)
    if header is None:
        return Scenario().resolved()
    return Scenario.from_json(header["scenario"]).resolved()


def corrupt_nodes(trace: Trace) -> Set[NodeId]:
    return {e["node"] for e in trace if e.get("event") == "corrupt"}


def honest_nodes(trace: Trace) -> List[NodeId]:
    header = trace_header(trace)
    if header is None:
        return []
    corrupt = corrupt_nodes(trace)
    return [m["id"] for m in header["members"] if m["id"] not in corrupt]


def end_time(trace: Trace) -> float:
    for event in reversed(trace):
        if event.get("event") == "end":
            return float(event["time"])
    return max((float(e["time"]) for e in trace), default=0.0)


def view_leaders(trace: Trace) -> Dict[int, NodeId]:
    """Leader of every view some node entered, in view order."""
    leaders: Dict[int, NodeId] = {}
    for event in trace:
        if event.get("event") == "enter_view" and event["view"] not in leaders:
            leaders[event["view"]] = event["leader"]
    return dict(sorted(leaders.items()))


# -- safety ------------------------------------------------------------------------

def _certificate_holds(cert_hex: str, digest_hex: str, height: int, block_hex: Optional[str],
                       roster: Roster) -> bool:
    try:
        cert = QuorumCertificate.decode(bytes.fromhex(cert_hex))
        block = BlockProposal.decode(bytes.fromhex(block_hex)) if block_hex else None
    except ValueError:
        return False
    if cert.phase is not Phase.COMMIT or cert.block_digest.hex() != digest_hex or cert.height != height:
        return False
    if block is not None and (block.digest != cert.block_digest or block.height != height):
        return False
    return verify_certificate(cert, roster)


def check_safety(trace: Trace) -> List[Dict[str, Any]]:
    """
    Fork and certificate scan over honest commit records.

    Returns:
        One ``fork`` entry per height with conflicting honest commits and one
        ``bad_certificate`` entry per commit whose logged certificate does not
        verify. Empty means safe.
    """
    roster = roster_from_trace(trace)
    corrupt = corrupt_nodes(trace)
    by_height: Dict[int, Dict[str, List[NodeId]]] = defaultdict(lambda: defaultdict(list))
    checked: Dict[Tuple, bool] = {}
    violations: List[Dict[str, Any]] = []

    for event in trace:
        if event.get("event") != "commit" or event["node"] in corrupt:
            continue
        height, digest = event["height"], event["digest"]
        by_height[height][digest].append(event["node"])
        if "cert" not in event:
            continue
        key = (event["cert"], digest, height, event.get("block"))
        if key not in checked:
            checked[key] = roster is not None and _certificate_holds(*key, roster)
        if not checked[key]:
            violations.append({"kind": "bad_certificate", "height": height,
                               "node": event["node"], "time": event["time"]})

    for height in sorted(by_height):
        digests = by_height[height]
        if len(digests) > 1:
            violations.append({"kind": "fork", "height": height,
                               "digests": {d: sorted(nodes) for d, nodes in sorted(digests.items())}})

    violations.sort(key=lambda v: (v["height"], v["kind"]))
    if violations:
        logger.warning(f"safety check found {len(violations)} violation(s)")
    return violations


# -- liveness ----------------------------------------------------------------------

def commit_bound(delta: float, timeout: float) -> float:
    """
    Time from the last honest entry into a view to the last honest commit
    when the leader is honest and the network is synchronous: one hop for
    view changes, one for the proposal, then per phase one fallback wait
    (timeout/4) plus three hops.
    """
    return 6 * delta + timeout / 2


def check_liveness(trace: Trace, scenario: Optional[Scenario] = None) -> List[Dict[str, Any]]:
    """
    Honest-leader views after GST that did not commit within the bound.

    A view is checked when every honest node entered it at the same height,
    no entry precedes GST, its leader is honest, and the entries are spread
    by at most (smallest timeout - 2 delta), so no honest timer can expire
    before the proposal arrives. Heights at or beyond the target round count
    and views cut off by the end of the run are skipped.
    """
    s = scenario.resolved() if scenario is not None else scenario_from_trace(trace)
    corrupt = corrupt_nodes(trace)
    honest = set(honest_nodes(trace))
    if not honest:
        return []
    finished = end_time(trace)

    entries: Dict[int, Dict[NodeId, Tuple[float, int, float]]] = defaultdict(dict)
    leaders: Dict[int, NodeId] = {}
    first_commit: Dict[Tuple[NodeId, int], float] = {}
    for event in trace:
        kind, node = event.get("event"), event.get("node")
        if node not in honest:
            continue
        if kind == "enter_view":
            entries[event["view"]][node] = (float(event["time"]), event["height"], float(event["timeout"]))
            leaders.setdefault(event["view"], event["leader"])
        elif kind == "commit":
            first_commit.setdefault((node, event["height"]), float(event["time"]))

    stalls: List[Dict[str, Any]] = []
    for view in sorted(entries):
        entered = entries[view]
        if set(entered) != honest or leaders[view] in corrupt:
            continue
        heights = {h for _, h, _ in entered.values()}
        if len(heights) != 1:
            continue
        height = heights.pop()
        if height >= s.rounds:
            continue
        times = [t for t, _, _ in entered.values()]
        timeouts = [tau for _, _, tau in entered.values()]
        if min(times) < s.gst or max(times) - min(times) > min(timeouts) - 2 * s.delta + TIME_EPSILON:
            continue
        deadline = max(times) + commit_bound(s.delta, max(timeouts))
        if deadline > finished:
            continue
        missing = sorted(node for node in honest
                         if first_commit.get((node, height), math.inf) > deadline + TIME_EPSILON)
        if missing:
            stalls.append({"view": view, "height": height, "leader": leaders[view],
                           "entered": max(times), "deadline": deadline, "missing": missing})

    if stalls:
        logger.warning(f"liveness check found {len(stalls)} stalled view(s)")
    return stalls


def check_delays(trace: Trace, scenario: Optional[Scenario] = None) -> List[Dict[str, Any]]:
    """
    Delay contract over recorded deliveries between honest nodes: at most
    delta after GST, no later than GST + delta for messages sent before it.
    Traces recorded without ``record_messages`` have nothing to scan.
    """
    s = scenario.resolved() if scenario is not None else scenario_from_trace(trace)
    corrupt = corrupt_nodes(trace)
    violations = []
    for event in trace:
        if event.get("event") != "deliver":
            continue
        if event["node"] in corrupt or event["sender"] in corrupt:
            continue
        sent, arrived = float(event["sent"]), float(event["time"])
        if sent >= s.gst:
            late = arrived - sent > s.delta + TIME_EPSILON
        else:
            late = arrived > s.gst + s.delta + TIME_EPSILON or arrived - sent > s.pre_gst_max_delay + TIME_EPSILON
        if late:
            violations.append({"sender": event["sender"], "recipient": event["node"],
                               "sent": sent, "delivered": arrived, "kind": event.get("kind")})
    return violations


# -- fairness ----------------------------------------------------------------------

def streak_runs(flags: Sequence[bool]) -> Counter:
    """Histogram of maximal run lengths of True values."""
    runs: Counter = Counter()
    length = 0
    for flag in flags:
        if flag:
            length += 1
        elif length:
            runs[length] += 1
            length = 0
    if length:
        runs[length] += 1
    return runs


@dataclass
class StreakStat:
    """d consecutive malicious leaders, counted over disjoint blocks of d views."""
    length: int
    blocks: int
    observed: int
    expected: float
    sigma: float
    sliding: int

    @property
    def within_bounds(self) -> bool:
        return abs(self.observed - self.expected) <= SIGMAS * self.sigma + TIME_EPSILON


@dataclass
class FairnessReport:
    views: int
    counts: Dict[NodeId, int]
    frequencies: Dict[NodeId, float]
    chi_square: float
    degrees_of_freedom: int
    p_value: float
    outliers: List[NodeId]
    malicious: List[NodeId]
    malicious_frequency: float
    malicious_expected: float
    malicious_sigma: float
    streaks: List[StreakStat] = field(default_factory=list)
    streak_histogram: Dict[int, int] = field(default_factory=dict)
    underpowered: bool = False

    @property
    def passed(self) -> Optional[bool]:
        """None when underpowered, otherwise the overall verdict."""
        if self.underpowered:
            return None
        malicious_ok = abs(self.malicious_frequency - self.malicious_expected) * self.views \
            <= SIGMAS * self.malicious_sigma + TIME_EPSILON
        return (not self.outliers and self.p_value > CHI2_ALPHA and malicious_ok
                and all(s.within_bounds for s in self.streaks))

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passed"] = self.passed
        data["counts"] = {str(k): v for k, v in self.counts.items()}
        data["frequencies"] = {str(k): v for k, v in self.frequencies.items()}
        data["streak_histogram"] = {str(k): v for k, v in self.streak_histogram.items()}
        return data


def fairness_report(trace: Trace, roster: Optional[Roster] = None,
                    min_views: int = DEFAULT_MIN_VIEWS) -> FairnessReport:
    """
    Leader-election fairness over the views of a trace.

    Per-node frequencies are tested against uniform with a chi-square test
    (n - 1 degrees of freedom) and a 3-sigma binomial band; the malicious
    share and the d-streaks (d = 1..3) are tested against (f/n)^d.

    Args:
        trace: Simulation trace or :func:`election_trace` output
        roster: Roster to test against; read from the trace header if omitted
        min_views: Below this many views the report is marked underpowered
    """
    roster = roster if roster is not None else roster_from_trace(trace)
    nodes = list(roster.node_ids) if roster is not None else []
    leaders = view_leaders(trace)
    views = len(leaders)
    n = max(len(nodes), 1)

    counts = {node: 0 for node in nodes}
    for leader in leaders.values():
        counts[leader] = counts.get(leader, 0) + 1
    observed = np.array([counts[node] for node in sorted(counts)], dtype=float)
    frequencies = {node: (counts[node] / views if views else 0.0) for node in sorted(counts)}

    p_uniform = 1.0 / n
    sigma = math.sqrt(views * p_uniform * (1 - p_uniform))
    outliers = [node for node in sorted(counts)
                if abs(counts[node] - views * p_uniform) > SIGMAS * sigma + TIME_EPSILON]

    if len(observed) > 1 and views > 0:
        statistic, p_value = stats.chisquare(observed)
        statistic, p_value = float(statistic), float(p_value)
    else:
        statistic, p_value = 0.0, 1.0

    malicious = sorted(corrupt_nodes(trace) & set(nodes))
    p_bad = len(malicious) / n
    bad = sum(counts.get(node, 0) for node in malicious)

    ordered = sorted(leaders)
    flags = [leaders[v] in malicious for v in ordered]
    streaks = []
    for d in range(1, MAX_STREAK + 1):
        blocks = views // d
        in_block = sum(all(flags[b * d:(b + 1) * d]) for b in range(blocks))
        sliding = sum(all(flags[i:i + d]) for i in range(max(views - d + 1, 0)))
        p_d = p_bad ** d
        streaks.append(StreakStat(length=d, blocks=blocks, observed=int(in_block),
                                  expected=blocks * p_d,
                                  sigma=float(stats.binom.std(blocks, p_d)) if blocks else 0.0,
                                  sliding=int(sliding)))

    report = FairnessReport(
        views=views,
        counts=dict(sorted(counts.items())),
        frequencies=frequencies,
        chi_square=statistic,
        degrees_of_freedom=max(len(nodes) - 1, 0),
        p_value=p_value,
        outliers=outliers,
        malicious=malicious,
        malicious_frequency=bad / views if views else 0.0,
        malicious_expected=p_bad,
        malicious_sigma=math.sqrt(views * p_bad * (1 - p_bad)),
        streaks=streaks,
        streak_histogram=dict(sorted(streak_runs(flags).items())),
        underpowered=views < min_views,
    )
    if report.underpowered:
        logger.info(f"fairness report over {views} views is underpowered (< {min_views})")
    return report


def election_trace(scenario: Scenario, views: int) -> List[Dict[str, Any]]:
    """
    Leader schedule for ``views`` views without running consensus.

    The roster, beacon and static corruptions match what :class:`Simulation`
    builds for the same scenario, so the result feeds
    :func:`fairness_report` directly.
    """
    from .simulation import Simulation

    sim = Simulation(scenario)
    trace: List[Dict[str, Any]] = [sim._header()]
    for node in sorted(sim.adversary.corrupt):
        trace.append({"time": 0.0, "node": node, "event": "corrupt", "height": -1, "view": 0,
                      "digest": "", "policy": sim.scenario.adversary_policy.value})
    for view in range(views):
        out = sim.beacon.output(view)
        if not sim.beacon.verify(out):
            raise ValueError(f"beacon output for round {view} failed verification")
        trace.append({"time": 0.0, "node": None, "event": "enter_view", "height": None, "view": view,
                      "digest": "", "leader": elect_leader(out.randomness, view, sim.roster)})
    return trace


# -- metrics -------------------------------------------------------------------------

@dataclass
class Metrics:
    """Summary of one execution, computed from its trace."""
    commits: int = 0
    max_height: int = 0
    latency_mean: float = 0.0
    latency_p50: float = 0.0
    latency_p95: float = 0.0
    latency_max: float = 0.0
    views: int = 0
    timeouts: int = 0
    equivocations: int = 0
    leader_histogram: Dict[NodeId, int] = field(default_factory=dict)
    streak_histogram: Dict[int, int] = field(default_factory=dict)
    safety_violations: int = 0
    liveness_stalls: int = 0
    delay_violations: int = 0
    messages_sent: int = 0
    end_time: float = 0.0
    stop_reason: str = ""

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data["leader_histogram"] = {str(k): v for k, v in self.leader_histogram.items()}
        data["streak_histogram"] = {str(k): v for k, v in self.streak_histogram.items()}
        return data

    def to_row(self) -> Dict[str, Any]:
        """Flat record for CSV output; histograms become JSON strings."""
        row = self.to_json()
        row["leader_histogram"] = json.dumps(row["leader_histogram"], sort_keys=True)
        row["streak_histogram"] = json.dumps(row["streak_histogram"], sort_keys=True)
        return row

    @property
    def passed(self) -> bool:
        return self.safety_violations == 0 and self.liveness_stalls == 0


def commit_latencies(trace: Trace) -> List[float]:
    """Commit time minus proposal time, per honest commit with a matching proposal."""
    proposed: Dict[Tuple[int, int, str], float] = {}
    for event in trace:
        if event.get("event") == "propose":
            proposed.setdefault((event["height"], event["view"], event["digest"]), float(event["time"]))
    corrupt = corrupt_nodes(trace)
    latencies = []
    for event in trace:
        if event.get("event") != "commit" or event["node"] in corrupt:
            continue
        key = (event["height"], event["view"], event["digest"])
        if key in proposed:
            latencies.append(float(event["time"]) - proposed[key])
    return latencies


def compute_metrics(trace: Trace, scenario: Optional[Scenario] = None) -> Metrics:
    scenario = scenario.resolved() if scenario is not None else scenario_from_trace(trace)
    honest = honest_nodes(trace)
    corrupt = corrupt_nodes(trace)

    committed: Dict[NodeId, Set[int]] = {node: set() for node in honest}
    timeouts = equivocations = 0
    for event in trace:
        kind, node = event.get("event"), event.get("node")
        if node not in committed:
            continue
        if kind == "commit":
            committed[node].add(event["height"])
        elif kind == "timeout":
            timeouts += 1
        elif kind == "equivocation":
            equivocations += 1

    latencies = np.array(commit_latencies(trace), dtype=float)
    leaders = view_leaders(trace)
    end = next((e for e in reversed(trace) if e.get("event") == "end"), {})

    return Metrics(
        commits=min((len(h) for h in committed.values()), default=0),
        max_height=max((len(h) for h in committed.values()), default=0),
        latency_mean=float(np.mean(latencies)) if latencies.size else 0.0,
        latency_p50=float(np.percentile(latencies, 50)) if latencies.size else 0.0,
        latency_p95=float(np.percentile(latencies, 95)) if latencies.size else 0.0,
        latency_max=float(np.max(latencies)) if latencies.size else 0.0,
        views=len(leaders),
        timeouts=timeouts,
        equivocations=equivocations,
        leader_histogram=dict(sorted(Counter(leaders.values()).items())),
        streak_histogram=dict(sorted(streak_runs([leaders[v] in corrupt for v in leaders]).items())),
        safety_violations=len(check_safety(trace)),
        liveness_stalls=len(check_liveness(trace, scenario)),
        delay_violations=len(check_delays(trace, scenario)),
        messages_sent=int(end.get("messages_sent", 0)),
        end_time=float(end.get("time", end_time(trace))),
        stop_reason=str(end.get("stop_reason", "")),
    )
