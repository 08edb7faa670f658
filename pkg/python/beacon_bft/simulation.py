"""
Deterministic discrete-event simulation of a full protocol execution
"""

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .adversary import AdversaryState, Behaviour, adversary_step, behaviour_for, initial_adversary
from .beacon import MockBeacon, ThresholdBeacon
from .config import BeaconBackend, Scenario
from .consensus import (
    Broadcast,
    ConsensusState,
    Emit,
    ReplicaContext,
    Send,
    SetTimer,
    TimerFired,
    ViewSchedule,
    on_message,
    on_timer,
    start,
)
from .encoding import sha256, u64
from .membership import NodeId, Roster
from .messages import LogEntry, message_height
from .signing import KeyPair

logger = logging.getLogger(__name__)


def random_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for network delays and adversary choices."""
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def node_keypairs(scenario: Scenario) -> List[KeyPair]:
    return [KeyPair.from_seed(scenario.signature_scheme, b"node" + u64(scenario.seed) + u64(i))
            for i in range(scenario.n)]


def build_beacon(scenario: Scenario):
    """Beacon service selected by the scenario's backend."""
    if scenario.beacon_backend is BeaconBackend.THRESHOLD:
        return ThresholdBeacon.create(scenario.n, scenario.beacon_threshold, scenario.seed)
    return MockBeacon(scenario.seed)


def _no_transactions(now: float) -> Tuple[bytes, ...]:
    return ()


@dataclass
class SimulationResults:
    """Container for one execution: metrics, trace, final logs and metadata."""
    metrics: Any = None
    trace: List[Dict[str, Any]] = field(default_factory=list)
    logs: Dict[NodeId, Tuple[LogEntry, ...]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def commit_events(self, node: Optional[NodeId] = None) -> List[Dict[str, Any]]:
        """Commit records, optionally for one node."""
        return [e for e in self.trace
                if e["event"] == "commit" and (node is None or e["node"] == node)]

    def trace_digest(self) -> str:
        """SHA-256 over the canonical JSON-lines rendering of the trace."""
        from .utils import trace_lines
        return sha256(*(line.encode() for line in trace_lines(self.trace))).hex()


class Simulation:
    """
    Event loop over every replica of one scenario.

    Messages and timers share a single heap keyed by (time, sequence number),
    so a scenario always replays to the same trace.
    """

    def __init__(self, scenario: Scenario):
        """
        Build replicas, beacon and adversary for ``scenario``.

        Raises:
            ConfigurationError: the scenario fails validation
        """
        self.scenario = scenario.checked()
        s = self.scenario
        self._rng, self._adversary_rng = random_streams(s.seed)

        self.keypairs = node_keypairs(s)
        self.roster = Roster.from_public_keys([kp.public_key for kp in self.keypairs])
        self.beacon = build_beacon(s)
        self.schedule = ViewSchedule(self.beacon, self.roster, s.branching)
        self.contexts: Dict[NodeId, ReplicaContext] = {
            i: ReplicaContext(
                node_id=i,
                keypair=self.keypairs[i],
                roster=self.roster,
                schedule=self.schedule,
                delta=s.delta,
                timeout_base=s.timeout_base,
                block_cap=s.block_cap,
                mempool=self._mempool,
            )
            for i in self.roster.node_ids
        }
        self.adversary: AdversaryState = initial_adversary(
            s.f, s.corruption, self.roster.node_ids, self._adversary_rng, s.initial_corrupt)
        self.behaviours: Dict[NodeId, Behaviour] = {}
        self.states: Dict[NodeId, ConsensusState] = {}
        self.trace: List[Dict[str, Any]] = []

        self.now = 0.0
        self.messages_sent = 0
        self.events_processed = 0
        self._queue: List[tuple] = []
        self._seq = itertools.count()
        self._next_round = 0
        self._commit_seen = False
        self._fork_injected = False

    # -- environment ---------------------------------------------------------

    def _mempool(self, now: float) -> List[bytes]:
        """Transaction i becomes available at time i / tx_rate."""
        rate = self.scenario.tx_rate
        if rate <= 0:
            return []
        return [u64(i) for i in range(int(now * rate) + 1)]

    def _delay(self, sender: NodeId) -> float:
        s = self.scenario
        behaviour = self.behaviours.get(sender)
        slow = behaviour is not None and behaviour.max_delay
        if self.now < s.gst:
            d = s.pre_gst_max_delay if slow else float(self._rng.uniform(0.0, s.pre_gst_max_delay))
            # everything sent before GST lands by GST + delta
            return min(d, s.gst + s.delta - self.now)
        return s.delta if slow else float(self._rng.uniform(s.min_delay, s.delta))

    def honest_nodes(self) -> List[NodeId]:
        return [i for i in self.roster.node_ids if not self.adversary.is_corrupt(i)]

    # -- queue -----------------------------------------------------------------

    def _push(self, at: float, recipient: NodeId, payload, sender: NodeId):
        heapq.heappush(self._queue, (at, next(self._seq), recipient, payload, sender, self.now))

    def _send(self, sender: NodeId, recipient: NodeId, msg):
        if recipient not in self.contexts:
            return
        if recipient == sender:
            self._push(self.now, recipient, msg, sender)
            return
        self.messages_sent += 1
        self._push(self.now + self._delay(sender), recipient, msg, sender)

    def _route(self, node: NodeId, out):
        behaviour = self.behaviours.get(node)
        if behaviour is not None:
            if behaviour.drops_all:
                return
            out = behaviour.transform(self.contexts[node], out)
        for item in out:
            if isinstance(item, Emit):
                self._emit(node, item)
            elif isinstance(item, SetTimer):
                self._push(max(item.deadline, self.now), node,
                           TimerFired(item.kind, item.view, item.key), node)
            elif isinstance(item, Send):
                self._send(node, item.recipient, item.msg)
            elif isinstance(item, Broadcast):
                for peer in self.roster.node_ids:
                    if peer != node:
                        self._send(node, peer, item.msg)

    def _deliver(self, recipient: NodeId, payload, sender: NodeId, sent: float):
        behaviour = self.behaviours.get(recipient)
        if behaviour is not None and behaviour.drops_all:
            return
        ctx = self.contexts[recipient]
        state = self.states[recipient]
        if isinstance(payload, TimerFired):
            state, out = on_timer(state, payload, ctx, self.now)
        else:
            if self.scenario.record_messages and sender != recipient:
                self.trace.append({
                    "time": self.now, "node": recipient, "event": "deliver",
                    "height": message_height(payload), "view": None, "digest": "",
                    "sender": sender, "sent": sent, "delay": self.now - sent,
                    "kind": type(payload).__name__,
                })
            state, out = on_message(state, payload, ctx, self.now)
            if behaviour is not None:
                out = list(out) + behaviour.on_deliver(ctx, payload)
        self.states[recipient] = state
        self._route(recipient, out)

    # -- trace and adversary -----------------------------------------------------

    def _emit(self, node: NodeId, e: Emit):
        entry = {"time": self.now, "node": node, "event": e.event, "height": e.height,
                 "view": e.view, "digest": e.digest.hex()}
        entry.update(e.extra)
        self.trace.append(entry)
        if e.event != "commit" or self.adversary.is_corrupt(node):
            return
        self._commit_seen = True
        if self.scenario.inject_fork_at == e.height and not self._fork_injected:
            self._inject_fork(node, entry)
        self._end_rounds(e.height, e.view)

    def _inject_fork(self, node: NodeId, entry: Dict[str, Any]):
        others = [i for i in self.honest_nodes() if i != node]
        if not others:
            return
        self._fork_injected = True
        forged = dict(entry, node=others[0], via="injected",
                      digest=sha256(b"fork", bytes.fromhex(entry["digest"])).hex())
        self.trace.append(forged)
        logger.warning(f"injected conflicting commit at height {entry['height']} for node {others[0]}")

    def _end_rounds(self, height: int, view: int):
        """One adversary move per committed height, at its first honest commit."""
        while self._next_round <= height:
            r = self._next_round
            leader = self.schedule.leader(view) if r == height else None
            before = self.adversary.corrupt
            self.adversary = adversary_step(self.adversary, r, self._adversary_rng, leader)
            for node in sorted(self.adversary.corrupt - before):
                self._activate(node, r)
            self._next_round += 1

    def _activate(self, node: NodeId, round_end: int):
        behaviour = behaviour_for(self.scenario.adversary_policy)
        self.behaviours[node] = behaviour
        if behaviour.censors:
            self.contexts[node].mempool = _no_transactions
        state = self.states.get(node)
        self.trace.append({
            "time": self.now, "node": node, "event": "corrupt", "height": round_end,
            "view": state.view if state is not None else 0, "digest": "",
            "policy": behaviour.policy.value,
        })
        logger.info(f"node {node} corrupted ({behaviour.policy.value}) at end of round {round_end}")

    def _done(self) -> bool:
        target = self.scenario.rounds
        return all(self.states[i].height >= target for i in self.honest_nodes())

    # -- driver ------------------------------------------------------------------

    def _header(self) -> Dict[str, Any]:
        s = self.scenario
        return {
            "time": 0.0, "node": None, "event": "roster", "height": 0, "view": 0, "digest": "",
            "n": s.n, "f": s.f, "quorum": self.roster.quorum,
            "scheme": s.signature_scheme.value,
            "members": [{"id": m.node_id, "pubkey_hex": m.public_key.hex()} for m in self.roster.members],
            "scenario": s.to_json(),
        }

    def run(self) -> SimulationResults:
        """
        Run until every honest replica has committed ``rounds`` heights, the
        queue drains, or ``max_time`` passes.

        Returns:
            SimulationResults with metrics, trace and metadata
        """
        s = self.scenario
        wall_start = time.time()
        self.trace.append(self._header())
        for node in sorted(self.adversary.corrupt):
            self._activate(node, -1)
        for node in self.roster.node_ids:
            state, out = start(self.contexts[node], 0.0)
            self.states[node] = state
            self._route(node, out)

        stop_reason = "queue_empty"
        while self._queue:
            if self._commit_seen:
                self._commit_seen = False
                if self._done():
                    stop_reason = "rounds"
                    break
            at, _, recipient, payload, sender, sent = heapq.heappop(self._queue)
            if at > s.max_time:
                stop_reason = "max_time"
                break
            self.now = at
            self.events_processed += 1
            self._deliver(recipient, payload, sender, sent)
        else:
            if self._done():
                stop_reason = "rounds"

        honest = self.honest_nodes()
        self.trace.append({
            "time": self.now, "node": None, "event": "end",
            "height": min((self.states[i].height for i in honest), default=0),
            "view": max((self.states[i].view for i in honest), default=0),
            "digest": "", "messages_sent": self.messages_sent, "stop_reason": stop_reason,
            "corrupt": sorted(self.adversary.corrupt),
        })
        elapsed = time.time() - wall_start

        from .analysis import compute_metrics
        results = SimulationResults(
            metrics=compute_metrics(self.trace, s),
            trace=self.trace,
            logs={i: st.log for i, st in self.states.items()},
        )
        results.metadata = {
            'scenario': s.name,
            'scenario_config': s.to_json(),
            'n': s.n,
            'f': s.f,
            'seed': s.seed,
            'execution_time': elapsed,
            'events_processed': self.events_processed,
            'events_per_second': self.events_processed / elapsed if elapsed > 0 else 0.0,
            'final_time': self.now,
            'stop_reason': stop_reason,
            'messages_sent': self.messages_sent,
        }
        logger.info(
            f"run {s.name or 'scenario'} (n={s.n}, f={s.f}, seed={s.seed}) stopped on {stop_reason} "
            f"at t={self.now:.2f} after {self.events_processed} events"
        )
        return results


def run(scenario: Scenario) -> Tuple[Any, List[Dict[str, Any]]]:
    """
    Execute ``scenario`` and return ``(metrics, trace)``.

    Identical scenarios give identical metrics and traces.
    """
    results = Simulation(scenario).run()
    return results.metrics, results.trace
