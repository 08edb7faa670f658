"""
Rotating-leader BFT state machine.

Each view has a leader and a two-level relay tree derived from the beacon
output of that view. A view runs two vote phases:

    proposal -> Prepare votes -> prepare certificate (lock) ->
    Commit votes -> commit certificate (append to log, next height)

Votes travel leaf -> subleader -> leader. Every transition is a pure
function ``(state, input) -> (new state, outbound)``; the outbound list
holds messages, timer requests and trace events for the harness.
"""

import dataclasses
import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .encoding import sha256, u64
from .errors import BeaconBftError, EmptyRosterError, InsufficientVotesError, NotLeaderError, ParameterError
from .membership import NodeId, Roster
from .messages import (
    GENESIS_DIGEST,
    BlockProposal,
    CertificateMsg,
    LogEntry,
    Phase,
    ProposalMsg,
    QuorumCertificate,
    SyncMsg,
    SyncRequest,
    ViewChangeMsg,
    Vote,
    VoteBatch,
    message_height,
    message_sender,
    message_view,
    proposal_message,
    view_change_message,
    vote_message,
)
from .signing import KeyPair, SignatureScheme, aggregate, verify, verify_aggregate

logger = logging.getLogger(__name__)

MAX_PENDING = 4096
SYNC_BATCH = 64


class Step(enum.Enum):
    PROPOSE = "propose"
    PREPARE = "prepare"
    COMMIT = "commit"


class TimerKind(str, enum.Enum):
    VIEW = "view"
    RELAY = "relay"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class Send:
    recipient: NodeId
    msg: object


@dataclass(frozen=True)
class Broadcast:
    """Deliver ``msg`` to every roster member except the sender."""
    msg: object


@dataclass(frozen=True)
class SetTimer:
    deadline: float
    kind: TimerKind
    view: int
    key: int = 0


@dataclass(frozen=True)
class TimerFired:
    kind: TimerKind
    view: int
    key: int = 0


@dataclass(frozen=True)
class Emit:
    """A trace event."""
    event: str
    height: int
    view: int
    digest: bytes = b""
    extra: Mapping[str, object] = field(default_factory=dict)


Outbound = Union[Send, Broadcast, SetTimer, Emit]


# -- leader election and relay tree ------------------------------------------

def elect_leader(randomness: bytes, view: int, roster: Roster) -> NodeId:
    """members[ H(randomness || view) mod |members| ] over the canonical roster order."""
    if roster.size == 0:
        raise EmptyRosterError("cannot elect a leader from an empty roster")
    index = int.from_bytes(sha256(randomness, u64(view)), "big") % roster.size
    return roster.members[index].node_id


@dataclass(frozen=True)
class CommTree:
    leader: NodeId
    subleaders: Tuple[NodeId, ...]
    assignment: Tuple[Tuple[NodeId, ...], ...]
    branching: int

    @property
    def leaves(self) -> Dict[NodeId, Tuple[NodeId, ...]]:
        return dict(zip(self.subleaders, self.assignment))

    @property
    def members(self) -> Tuple[NodeId, ...]:
        nodes = [self.leader, *self.subleaders]
        for group in self.assignment:
            nodes.extend(group)
        return tuple(nodes)

    @property
    def depth(self) -> int:
        if not self.subleaders:
            return 0
        return 2 if any(self.assignment) else 1

    def children_of(self, node: NodeId) -> Tuple[NodeId, ...]:
        if node == self.leader:
            return self.subleaders
        return self.leaves.get(node, ())

    def parent_of(self, node: NodeId) -> Optional[NodeId]:
        if node == self.leader:
            return None
        if node in self.subleaders:
            return self.leader
        for subleader, group in zip(self.subleaders, self.assignment):
            if node in group:
                return subleader
        return None


def build_tree(randomness: bytes, view: int, roster: Roster, g: int) -> CommTree:
    """
    Two-level relay tree for ``view``.

    Args:
        randomness: Beacon randomness of the view
        view: View number; the permutation rotates with it
        roster: Canonical roster
        g: Branching factor; g >= n-1 gives a flat tree

    Returns:
        CommTree with the elected leader at the root
    """
    if g < 1:
        raise ParameterError(f"branching factor must be at least 1, got {g}")
    leader = elect_leader(randomness, view, roster)
    others = sorted(
        (m.node_id for m in roster.members if m.node_id != leader),
        key=lambda node: sha256(b"tree", randomness, u64(view), u64(node)),
    )
    width = min(g, len(others))
    subleaders = tuple(others[:width])
    groups: List[List[NodeId]] = [[] for _ in subleaders]
    for i, node in enumerate(others[width:]):
        groups[i % width].append(node)
    return CommTree(leader, subleaders, tuple(tuple(grp) for grp in groups), g)


class ViewSchedule:
    """Leader and tree per view, computed from beacon outputs fetched on demand."""

    def __init__(self, beacon, roster: Roster, branching: int):
        self.beacon = beacon
        self.roster = roster
        self.branching = branching
        self._randomness: Dict[int, bytes] = {}
        self._trees: Dict[int, CommTree] = {}

    def randomness(self, view: int) -> bytes:
        if view not in self._randomness:
            out = self.beacon.output(view)
            if not self.beacon.verify(out):
                raise BeaconBftError(f"beacon output for round {view} failed verification")
            self._randomness[view] = out.randomness
        return self._randomness[view]

    def tree(self, view: int) -> CommTree:
        if view not in self._trees:
            self._trees[view] = build_tree(self.randomness(view), view, self.roster, self.branching)
        return self._trees[view]

    def leader(self, view: int) -> NodeId:
        return self.tree(view).leader


def streak_probability(malicious_fraction: float, d: int) -> float:
    """Probability that d consecutive views all elect a malicious leader."""
    if not 0.0 <= malicious_fraction <= 1.0:
        raise ParameterError(f"malicious fraction must lie in [0, 1], got {malicious_fraction}")
    if d < 0:
        raise ParameterError(f"streak length must be non-negative, got {d}")
    return float(malicious_fraction) ** d


# -- certificates -------------------------------------------------------------

def form_certificate(votes: Iterable[Vote], roster: Roster,
                     scheme: SignatureScheme = SignatureScheme.ED25519) -> QuorumCertificate:
    """
    Aggregate votes on one (phase, digest, height, view) into a certificate.

    Votes from non-members, duplicate voters and invalid signatures are
    excluded before counting.

    Raises:
        InsufficientVotesError: fewer than quorum distinct valid voters remain
        ParameterError: votes reference different (phase, digest, height, view)
    """
    votes = list(votes)
    if not votes:
        raise InsufficientVotesError(0, roster.quorum)
    first = votes[0]
    key = (first.phase, first.block_digest, first.height, first.view)
    valid: Dict[NodeId, Vote] = {}
    for vote in votes:
        if (vote.phase, vote.block_digest, vote.height, vote.view) != key:
            raise ParameterError("votes for a certificate must share phase, digest, height and view")
        if vote.voter in valid or vote.voter not in roster:
            continue
        if not verify(scheme, roster.public_key(vote.voter), vote.message, vote.signature):
            logger.warning(f"excluding vote with invalid signature from node {vote.voter}")
            continue
        valid[vote.voter] = vote
    if len(valid) < roster.quorum:
        raise InsufficientVotesError(len(valid), roster.quorum)
    signers = tuple(sorted(valid))
    return QuorumCertificate(
        phase=first.phase,
        block_digest=first.block_digest,
        height=first.height,
        view=first.view,
        signers=signers,
        aggregate_signature=aggregate(scheme, [valid[s].signature for s in signers]),
        scheme=scheme,
    )


def verify_certificate(cert: QuorumCertificate, roster: Roster) -> bool:
    """Signers are distinct roster members, at least quorum-many, and the aggregate verifies."""
    signers = cert.signers
    if len(signers) < roster.quorum or any(a >= b for a, b in zip(signers, signers[1:])):
        return False
    if any(s not in roster for s in signers):
        return False
    keys = [roster.public_key(s) for s in signers]
    return verify_aggregate(cert.scheme, keys, cert.message, cert.aggregate_signature)


# -- replica state --------------------------------------------------------------

@dataclass
class ReplicaContext:
    """Per-replica configuration the transitions read but never change."""
    node_id: NodeId
    keypair: KeyPair
    roster: Roster
    schedule: ViewSchedule
    delta: float = 1.0
    timeout_base: float = 4.0
    block_cap: int = 1000
    mempool: Callable[[float], Sequence[bytes]] = lambda now: ()

    @property
    def scheme(self) -> SignatureScheme:
        return self.keypair.scheme

    @property
    def quorum(self) -> int:
        return self.roster.quorum

    def leader(self, view: int) -> NodeId:
        return self.schedule.leader(view)

    def tree(self, view: int) -> CommTree:
        return self.schedule.tree(view)


@dataclass(frozen=True)
class ConsensusState:
    """
    Replica state. Containers are never mutated in place; every transition
    builds new ones and returns a new state via ``dataclasses.replace``.
    """
    node_id: NodeId
    height: int = 0
    view: int = 0
    step: Step = Step.PROPOSE
    lock_block: Optional[BlockProposal] = None
    lock_qc: Optional[QuorumCertificate] = None
    log: Tuple[LogEntry, ...] = ()
    timeout: float = 4.0
    deadline: float = 0.0
    proposal: Optional[ProposalMsg] = None
    proposed: bool = False
    rejected: bool = False
    voted: FrozenSet[Phase] = frozenset()
    my_votes: Tuple[Vote, ...] = ()
    certified: FrozenSet[Phase] = frozenset()
    votes: Mapping[Tuple[Phase, bytes], Mapping[NodeId, Vote]] = field(default_factory=dict)
    relay: Mapping[Phase, Tuple[Vote, ...]] = field(default_factory=dict)
    flushed: FrozenSet[Phase] = frozenset()
    view_changes: Mapping[int, Mapping[NodeId, ViewChangeMsg]] = field(default_factory=dict)
    equivocators: FrozenSet[NodeId] = frozenset()
    pending: Tuple[object, ...] = ()
    sync_requested: FrozenSet[Tuple[NodeId, int]] = frozenset()
    sync_served: FrozenSet[Tuple[NodeId, int]] = frozenset()
    committed_txs: FrozenSet[bytes] = frozenset()

    @property
    def last_digest(self) -> bytes:
        return self.log[-1].block.digest if self.log else GENESIS_DIGEST

    @property
    def phase(self) -> Step:
        return self.step

    def tally(self, phase: Phase, digest: bytes) -> int:
        return len(self.votes.get((phase, digest), {}))


def _replace(state: ConsensusState, **changes) -> ConsensusState:
    return dataclasses.replace(state, **changes)


def start(ctx: ReplicaContext, now: float = 0.0) -> Tuple[ConsensusState, List[Outbound]]:
    """Initial state at height 0, view 0, plus the opening view-change message."""
    state = ConsensusState(node_id=ctx.node_id, timeout=ctx.timeout_base)
    state, out = _enter_view(state, 0, ctx, now, ctx.timeout_base, "start")
    return _settle(state, out, ctx, now)


def propose(state: ConsensusState, mempool: Iterable[bytes], ctx: ReplicaContext) -> BlockProposal:
    """
    Fresh block extending the last committed block.

    The payload is the canonically ordered prefix (up to the block cap) of
    the mempool transactions not yet committed.

    Raises:
        NotLeaderError: the caller does not lead ``state.view``
    """
    leader = ctx.leader(state.view)
    if leader != state.node_id:
        raise NotLeaderError(f"node {state.node_id} is not the leader of view {state.view} (leader {leader})")
    fresh = sorted(tx for tx in set(mempool) if tx not in state.committed_txs)
    return BlockProposal(
        height=state.height,
        view=state.view,
        parent_digest=state.last_digest,
        payload=tuple(fresh[:ctx.block_cap]),
        proposer=state.node_id,
    )


def on_message(state: ConsensusState, msg, ctx: ReplicaContext,
               now: float) -> Tuple[ConsensusState, List[Outbound]]:
    """Process one delivered protocol message."""
    state, out = _dispatch(state, msg, ctx, now)
    return _settle(state, out, ctx, now)


def on_timer(state: ConsensusState, timer: TimerFired, ctx: ReplicaContext,
             now: float) -> Tuple[ConsensusState, List[Outbound]]:
    """Process a fired timer; timers for other views are stale and ignored."""
    if timer.view != state.view:
        return state, []
    if timer.kind is TimerKind.VIEW:
        if now < state.deadline:
            return state, []
        return view_change(state, ctx, now)
    if timer.kind is TimerKind.RELAY:
        state, out = _flush(state, Phase(timer.key), ctx)
        return _settle(state, out, ctx, now)
    phase = Phase(timer.key)
    if phase in state.certified:
        return state, []
    mine = [v for v in state.my_votes if v.phase is phase]
    if not mine:
        return state, []
    leader = ctx.leader(state.view)
    return state, [
        Emit("fallback", state.height, state.view, mine[0].block_digest, {"phase": phase.name.lower()}),
        Send(leader, VoteBatch(state.node_id, (mine[0],))),
    ]


def view_change(state: ConsensusState, ctx: ReplicaContext,
                now: float) -> Tuple[ConsensusState, List[Outbound]]:
    """Abandon the current view: view+1 with a doubled timeout, carrying any lock."""
    out: List[Outbound] = [Emit("timeout", state.height, state.view, b"", {"timeout": state.timeout})]
    state, more = _enter_view(state, state.view + 1, ctx, now, state.timeout * 2, "timeout")
    return _settle(state, out + more, ctx, now)


def deliver_certified(state: ConsensusState, block: BlockProposal, cert: QuorumCertificate,
                      ctx: ReplicaContext, now: float) -> Tuple[ConsensusState, List[Outbound]]:
    """
    Commit ``block`` on the strength of its certificate alone.

    This is the catch-up path: no protocol history is needed, only a commit
    certificate that verifies against the roster for the next height.
    """
    if not _certifies(cert, block, state, ctx, Phase.COMMIT):
        return state, [Emit("reject_certificate", block.height, cert.view, block.digest)]
    state, out = _commit(state, block, cert, ctx, now)
    return _settle(state, out, ctx, now)


# -- internals ------------------------------------------------------------------

def _settle(state: ConsensusState, out: List[Outbound], ctx: ReplicaContext,
            now: float) -> Tuple[ConsensusState, List[Outbound]]:
    """
    Process messages a replica addresses to itself until none remain.

    Self-addressed traffic above the starting height is returned to the
    harness instead; a replica that alone forms a quorum would otherwise
    commit heights here without end.
    """
    result: List[Outbound] = []
    queue = deque(out)
    height = state.height
    while queue:
        item = queue.popleft()
        if (isinstance(item, Send) and item.recipient == state.node_id
                and (message_height(item.msg) or 0) <= height):
            state, more = _dispatch(state, item.msg, ctx, now)
            queue.extend(more)
            continue
        result.append(item)
    return state, result


def _sign_vote(ctx: ReplicaContext, phase: Phase, digest: bytes, height: int, view: int) -> Vote:
    signature = ctx.keypair.sign(vote_message(phase, digest, height, view))
    return Vote(ctx.node_id, phase, digest, height, view, signature)


def _enter_view(state: ConsensusState, view: int, ctx: ReplicaContext, now: float,
                timeout: float, reason: str) -> Tuple[ConsensusState, List[Outbound]]:
    keep: List[object] = []
    replay: List[object] = []
    for msg in state.pending:
        height, msg_view = message_height(msg), message_view(msg)
        if height is None or height < state.height:
            continue
        if height > state.height:
            keep.append(msg)
        elif msg_view is not None and msg_view >= view:
            replay.append(msg)

    state = _replace(
        state,
        view=view,
        step=Step.PROPOSE,
        proposal=None,
        proposed=False,
        rejected=False,
        voted=frozenset(),
        my_votes=(),
        certified=frozenset(),
        votes={},
        relay={},
        flushed=frozenset(),
        view_changes={v: m for v, m in state.view_changes.items() if v >= view},
        pending=tuple(keep),
        timeout=timeout,
        deadline=now + timeout,
    )
    leader = ctx.leader(view)
    lock_digest = state.lock_qc.block_digest if state.lock_qc is not None else b""
    lock_view = state.lock_qc.view + 1 if state.lock_qc is not None else 0
    vc = ViewChangeMsg(
        sender=state.node_id,
        height=state.height,
        view=view,
        lock_block=state.lock_block,
        lock_qc=state.lock_qc,
        signature=ctx.keypair.sign(view_change_message(state.height, view, lock_digest, lock_view)),
    )
    out: List[Outbound] = [
        Emit("enter_view", state.height, view, b"",
             {"leader": leader, "timeout": timeout, "reason": reason, "lock": lock_digest.hex()}),
        SetTimer(state.deadline, TimerKind.VIEW, view),
        Send(leader, vc),
    ]
    out.extend(Send(state.node_id, msg) for msg in replay)
    return state, out


def _dispatch(state: ConsensusState, msg, ctx: ReplicaContext,
              now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if isinstance(msg, SyncRequest):
        if msg.sender not in ctx.roster or msg.height >= state.height:
            return state, []
        return _serve_sync(state, msg.sender, msg.height)
    if isinstance(msg, SyncMsg):
        return _on_sync(state, msg, ctx, now)

    sender = message_sender(msg)
    height = message_height(msg)
    if sender not in ctx.roster or height is None:
        return state, []
    if height < state.height:
        # a proposal or view change at an old height comes from a replica that fell behind
        if isinstance(msg, (ProposalMsg, ViewChangeMsg)):
            return _serve_sync(state, sender, height)
        return state, []
    if height > state.height:
        return _defer(state, msg, sender, request_sync=True)

    if isinstance(msg, ProposalMsg):
        return _on_proposal(state, msg, ctx, now)
    if isinstance(msg, ViewChangeMsg):
        return _on_view_change(state, msg, ctx, now)
    if isinstance(msg, CertificateMsg):
        return _on_certificate(state, msg, ctx, now)
    if isinstance(msg, (Vote, VoteBatch)):
        votes = (msg,) if isinstance(msg, Vote) else msg.votes
        view = votes[0].view
        if view > state.view:
            return _defer(state, msg, sender, request_sync=False)
        if view < state.view:
            return state, []
        out: List[Outbound] = []
        for vote in votes:
            state, more = _on_vote(state, vote, ctx, now)
            out.extend(more)
        return state, out
    return state, []


def _defer(state: ConsensusState, msg, sender: NodeId,
           request_sync: bool) -> Tuple[ConsensusState, List[Outbound]]:
    pending = (state.pending + (msg,))[-MAX_PENDING:]
    state = _replace(state, pending=pending)
    key = (sender, state.height)
    if not request_sync or key in state.sync_requested:
        return state, []
    state = _replace(state, sync_requested=state.sync_requested | {key})
    return state, [Send(sender, SyncRequest(state.node_id, state.height))]


def _serve_sync(state: ConsensusState, peer: NodeId, height: int) -> Tuple[ConsensusState, List[Outbound]]:
    key = (peer, height)
    if key in state.sync_served or peer == state.node_id:
        return state, []
    entries = state.log[height:height + SYNC_BATCH]
    if not entries:
        return state, []
    state = _replace(state, sync_served=state.sync_served | {key})
    return state, [Send(peer, SyncMsg(state.node_id, tuple(entries)))]


def _on_sync(state: ConsensusState, msg: SyncMsg, ctx: ReplicaContext,
             now: float) -> Tuple[ConsensusState, List[Outbound]]:
    out: List[Outbound] = []
    last_view = None
    for entry in msg.entries:
        if entry.block.height != state.height:
            continue
        if not _certifies(entry.cert, entry.block, state, ctx, Phase.COMMIT):
            out.append(Emit("reject_certificate", entry.block.height, entry.cert.view, entry.block.digest))
            break
        state, more = _append(state, entry.block, entry.cert, "sync")
        out.extend(more)
        last_view = entry.cert.view
    if last_view is None:
        return state, out
    state, more = _enter_view(state, max(state.view, last_view) + 1, ctx, now, ctx.timeout_base, "sync")
    return state, out + more


def _certifies(cert: QuorumCertificate, block: BlockProposal, state: ConsensusState,
               ctx: ReplicaContext, phase: Phase) -> bool:
    return (
        cert.phase is phase
        and cert.block_digest == block.digest
        and cert.height == block.height == state.height
        and block.parent_digest == state.last_digest
        and verify_certificate(cert, ctx.roster)
    )


def _valid_lock(vc: ViewChangeMsg, ctx: ReplicaContext) -> bool:
    if vc.lock_qc is None:
        return vc.lock_block is None
    qc, block = vc.lock_qc, vc.lock_block
    return (
        block is not None
        and qc.phase is Phase.PREPARE
        and qc.height == vc.height
        and qc.block_digest == block.digest
        and verify_certificate(qc, ctx.roster)
    )


def _valid_view_change(vc: ViewChangeMsg, ctx: ReplicaContext) -> bool:
    if vc.sender not in ctx.roster:
        return False
    if not verify(ctx.scheme, ctx.roster.public_key(vc.sender), vc.message, vc.signature):
        return False
    return _valid_lock(vc, ctx)


def _highest_lock(view_changes: Iterable[ViewChangeMsg]) -> Optional[ViewChangeMsg]:
    locked = [vc for vc in view_changes if vc.lock_qc is not None]
    if not locked:
        return None
    return max(locked, key=lambda vc: (vc.lock_qc.view, vc.lock_qc.block_digest))


def _check_view_changes(view_changes: Sequence[ViewChangeMsg], height: int, view: int,
                        ctx: ReplicaContext) -> Tuple[bool, Optional[bytes]]:
    """(quorum of valid view changes for (height, view), digest of their highest lock)."""
    senders = set()
    valid = []
    for vc in view_changes:
        if vc.height != height or vc.view != view or vc.sender in senders:
            continue
        if not _valid_view_change(vc, ctx):
            continue
        senders.add(vc.sender)
        valid.append(vc)
    if len(valid) < ctx.quorum:
        return False, None
    highest = _highest_lock(valid)
    return True, highest.lock_qc.block_digest if highest is not None else None


def _on_view_change(state: ConsensusState, vc: ViewChangeMsg, ctx: ReplicaContext,
                    now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if vc.view < state.view or ctx.leader(vc.view) != state.node_id:
        return state, []
    if vc.sender in state.view_changes.get(vc.view, {}):
        return state, []
    if not _valid_view_change(vc, ctx):
        logger.warning(f"node {state.node_id}: invalid view change from {vc.sender} for view {vc.view}")
        return state, [Emit("invalid_message", state.height, vc.view, b"", {"sender": vc.sender, "kind": "view_change"})]
    collected = dict(state.view_changes.get(vc.view, {}))
    collected[vc.sender] = vc
    state = _replace(state, view_changes={**state.view_changes, vc.view: collected})
    return _try_propose(state, vc.view, ctx, now)


def _try_propose(state: ConsensusState, view: int, ctx: ReplicaContext,
                 now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if state.proposed and state.view == view:
        return state, []
    collected = [vc for vc in state.view_changes.get(view, {}).values() if vc.height == state.height]
    if len(collected) < ctx.quorum:
        return state, []
    out: List[Outbound] = []
    if view > state.view:
        state, out = _enter_view(state, view, ctx, now, state.timeout, "view_change_quorum")
    certificate = tuple(sorted(collected, key=lambda vc: vc.sender))
    highest = _highest_lock(certificate)
    if highest is not None:
        block, justify = highest.lock_block, highest.lock_qc
    else:
        block, justify = propose(state, ctx.mempool(now), ctx), None
    proposal = ProposalMsg(
        sender=state.node_id,
        height=state.height,
        view=view,
        block=block,
        justify=justify,
        view_changes=certificate,
        signature=ctx.keypair.sign(proposal_message(state.height, view, block.digest)),
    )
    state = _replace(state, proposed=True)
    out += [
        Emit("propose", state.height, view, block.digest,
             {"txs": len(block.payload), "reproposal": highest is not None}),
        Broadcast(proposal),
        Send(state.node_id, proposal),
    ]
    return state, out


def _safe_to_vote(state: ConsensusState, proposal: ProposalMsg, ctx: ReplicaContext,
                  certified: bool, highest: Optional[bytes]) -> bool:
    if state.lock_qc is None:
        return True
    digest = proposal.block.digest
    if digest == state.lock_qc.block_digest:
        return True
    justify = proposal.justify
    if (justify is not None and justify.phase is Phase.PREPARE and justify.height == state.height
            and justify.block_digest == digest and justify.view > state.lock_qc.view
            and verify_certificate(justify, ctx.roster)):
        return True
    # A quorum of view changes reports every lock that a commit could rest on.
    return certified and (highest is None or highest == digest)


def _on_proposal(state: ConsensusState, proposal: ProposalMsg, ctx: ReplicaContext,
                 now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if proposal.view < state.view:
        return state, []
    leader = ctx.leader(proposal.view)
    block = proposal.block
    if proposal.sender != leader or not verify(ctx.scheme, ctx.roster.public_key(leader),
                                               proposal.message, proposal.signature):
        logger.warning(f"node {state.node_id}: dropping proposal with bad origin or signature from {proposal.sender}")
        return state, [Emit("invalid_message", state.height, proposal.view, block.digest,
                            {"sender": proposal.sender, "kind": "proposal"})]
    if (block.height != state.height or block.parent_digest != state.last_digest
            or len(block.payload) > ctx.block_cap):
        return state, [Emit("reject_proposal", state.height, proposal.view, block.digest, {"reason": "invalid_block"})]

    certified, highest = False, None
    if proposal.view_changes:
        certified, highest = _check_view_changes(proposal.view_changes, state.height, proposal.view, ctx)

    out: List[Outbound] = []
    if proposal.view > state.view:
        if not certified:
            return state, []
        state, out = _enter_view(state, proposal.view, ctx, now, state.timeout, "proposal")

    if state.rejected:
        return state, out
    if state.proposal is not None:
        if state.proposal.block.digest == block.digest:
            return state, out
        logger.warning(f"node {state.node_id}: leader {leader} equivocated at height {state.height} view {state.view}")
        state = _replace(state, proposal=None, rejected=True, equivocators=state.equivocators | {leader})
        out.append(Emit("equivocation", state.height, state.view, block.digest, {"leader": leader}))
        return state, out

    if not _safe_to_vote(state, proposal, ctx, certified, highest):
        out.append(Emit("reject_proposal", state.height, state.view, block.digest, {"reason": "unsafe"}))
        return state, out

    deadline = now + state.timeout
    state = _replace(state, proposal=proposal, step=Step.PREPARE, deadline=deadline)
    out += [
        Emit("accept", state.height, state.view, block.digest, {"leader": leader}),
        SetTimer(deadline, TimerKind.VIEW, state.view),
    ]
    state, more = _cast_vote(state, Phase.PREPARE, block.digest, ctx, now)
    out.extend(more)
    return state, out


def _cast_vote(state: ConsensusState, phase: Phase, digest: bytes, ctx: ReplicaContext,
               now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if phase in state.voted:
        return state, []
    vote = _sign_vote(ctx, phase, digest, state.height, state.view)
    state = _replace(state, voted=state.voted | {phase}, my_votes=state.my_votes + (vote,))
    out: List[Outbound] = [
        Emit("vote", state.height, state.view, digest, {"phase": phase.name.lower()}),
        Send(state.node_id, vote),
    ]
    tree = ctx.tree(state.view)
    parent = tree.parent_of(state.node_id)
    if parent is not None and parent != tree.leader:
        out.append(Send(parent, vote))
        out.append(SetTimer(now + state.timeout / 4, TimerKind.FALLBACK, state.view, int(phase)))
    return state, out


def _on_vote(state: ConsensusState, vote: Vote, ctx: ReplicaContext,
             now: float) -> Tuple[ConsensusState, List[Outbound]]:
    if vote.height != state.height or vote.view != state.view or vote.voter not in ctx.roster:
        return state, []
    key = (vote.phase, vote.block_digest)
    existing = state.votes.get(key, {})
    if vote.voter in existing:
        return state, []
    if not verify(ctx.scheme, ctx.roster.public_key(vote.voter), vote.message, vote.signature):
        logger.warning(f"node {state.node_id}: invalid vote signature from {vote.voter}")
        return state, [Emit("invalid_message", state.height, state.view, vote.block_digest,
                            {"sender": vote.voter, "kind": "vote"})]
    state = _replace(state, votes={**state.votes, key: {**existing, vote.voter: vote}})

    out: List[Outbound] = []
    tree = ctx.tree(state.view)
    if state.node_id in tree.subleaders and (vote.voter == state.node_id
                                             or vote.voter in tree.children_of(state.node_id)):
        state, out = _relay(state, vote, tree, now)
    state, more = _check_quorum(state, vote.phase, vote.block_digest, ctx, now)
    return state, out + more


def _relay(state: ConsensusState, vote: Vote, tree: CommTree,
           now: float) -> Tuple[ConsensusState, List[Outbound]]:
    phase = vote.phase
    if phase in state.flushed:
        return state, [Send(tree.leader, VoteBatch(state.node_id, (vote,)))]
    buffer = state.relay.get(phase, ())
    if any(v.voter == vote.voter and v.block_digest == vote.block_digest for v in buffer):
        return state, []
    buffer = buffer + (vote,)
    state = _replace(state, relay={**state.relay, phase: buffer})
    out: List[Outbound] = []
    if len(buffer) == 1:
        out.append(SetTimer(now + state.timeout / 4, TimerKind.RELAY, state.view, int(phase)))
    expected = set(tree.children_of(state.node_id)) | {state.node_id}
    if expected <= {v.voter for v in buffer}:
        state, flushed = _flush_to(state, phase, tree.leader)
        out.extend(flushed)
    return state, out


def _flush(state: ConsensusState, phase: Phase, ctx: ReplicaContext) -> Tuple[ConsensusState, List[Outbound]]:
    if phase in state.flushed or not state.relay.get(phase):
        return state, []
    return _flush_to(state, phase, ctx.leader(state.view))


def _flush_to(state: ConsensusState, phase: Phase, leader: NodeId) -> Tuple[ConsensusState, List[Outbound]]:
    batch = state.relay.get(phase, ())
    state = _replace(state, flushed=state.flushed | {phase}, relay={**state.relay, phase: ()})
    return state, [Send(leader, VoteBatch(state.node_id, batch))]


def _known_block(state: ConsensusState, digest: bytes) -> Optional[BlockProposal]:
    if state.proposal is not None and state.proposal.block.digest == digest:
        return state.proposal.block
    if state.lock_block is not None and state.lock_block.digest == digest:
        return state.lock_block
    return None


def _check_quorum(state: ConsensusState, phase: Phase, digest: bytes, ctx: ReplicaContext,
                  now: float) -> Tuple[ConsensusState, List[Outbound]]:
    votes = state.votes.get((phase, digest), {})
    if len(votes) < ctx.quorum or phase in state.certified:
        return state, []
    block = _known_block(state, digest)
    if block is None:
        return state, []
    cert = form_certificate(votes.values(), ctx.roster, ctx.scheme)
    out: List[Outbound] = [Emit("certificate", state.height, state.view, digest,
                                {"phase": phase.name.lower(), "signers": len(cert.signers)})]
    if ctx.leader(state.view) == state.node_id:
        out.append(Broadcast(CertificateMsg(state.node_id, cert, block)))
    if phase is Phase.PREPARE:
        state, more = _on_prepare_certificate(state, cert, block, ctx, now)
    else:
        state, more = _commit(state, block, cert, ctx, now)
    return state, out + more


def _on_certificate(state: ConsensusState, msg: CertificateMsg, ctx: ReplicaContext,
                    now: float) -> Tuple[ConsensusState, List[Outbound]]:
    cert, block = msg.cert, msg.block
    if not _certifies(cert, block, state, ctx, cert.phase):
        return state, [Emit("reject_certificate", cert.height, cert.view, cert.block_digest,
                            {"sender": msg.sender})]
    if cert.phase is Phase.COMMIT:
        return _commit(state, block, cert, ctx, now)
    if cert.view != state.view:
        if state.lock_qc is None or cert.view > state.lock_qc.view:
            state = _replace(state, lock_block=block, lock_qc=cert)
            return state, [Emit("lock", state.height, cert.view, block.digest)]
        return state, []
    if Phase.PREPARE in state.certified:
        return state, []
    return _on_prepare_certificate(state, cert, block, ctx, now)


def _on_prepare_certificate(state: ConsensusState, cert: QuorumCertificate, block: BlockProposal,
                            ctx: ReplicaContext, now: float) -> Tuple[ConsensusState, List[Outbound]]:
    deadline = now + state.timeout
    changes = dict(certified=state.certified | {Phase.PREPARE}, step=Step.COMMIT, deadline=deadline)
    if state.lock_qc is None or cert.view >= state.lock_qc.view:
        changes.update(lock_block=block, lock_qc=cert)
    state = _replace(state, **changes)
    out: List[Outbound] = [
        Emit("lock", state.height, state.view, block.digest),
        SetTimer(deadline, TimerKind.VIEW, state.view),
    ]
    state, more = _cast_vote(state, Phase.COMMIT, block.digest, ctx, now)
    out.extend(more)
    # commit votes may have arrived before the prepare certificate
    state, more = _check_quorum(state, Phase.COMMIT, block.digest, ctx, now)
    return state, out + more


def _commit(state: ConsensusState, block: BlockProposal, cert: QuorumCertificate, ctx: ReplicaContext,
            now: float) -> Tuple[ConsensusState, List[Outbound]]:
    state, out = _append(state, block, cert, "certificate")
    state, more = _enter_view(state, max(state.view, cert.view) + 1, ctx, now, ctx.timeout_base, "commit")
    return state, out + more


def _append(state: ConsensusState, block: BlockProposal, cert: QuorumCertificate,
            via: str) -> Tuple[ConsensusState, List[Outbound]]:
    new_height = block.height + 1
    out: List[Outbound] = [
        Emit("commit", block.height, cert.view, block.digest, {
            "txs": len(block.payload),
            "via": via,
            "cert": cert.hex,
            "block": block.encode().hex(),
        }),
    ]
    state = _replace(
        state,
        log=state.log + (LogEntry(block, cert),),
        height=new_height,
        lock_block=None,
        lock_qc=None,
        committed_txs=state.committed_txs | frozenset(block.payload),
        sync_requested=frozenset(k for k in state.sync_requested if k[1] >= new_height),
    )
    return state, out
