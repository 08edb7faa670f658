"""
Round-adaptive adversary and the Byzantine behaviour menu.

Corruptions chosen at the end of round r become effective at the end of
round r+1, and at most f nodes are ever corrupted. Corrupted nodes follow
one fixed behaviour from the policy menu.
"""

import dataclasses
import enum
import logging
from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .consensus import Broadcast, Emit, Outbound, ReplicaContext, Send
from .messages import Phase, ProposalMsg, Vote, VoteBatch, proposal_message, vote_message

logger = logging.getLogger(__name__)

EQUIVOCATION_MARKER = b"conflict"


class AdversaryPolicy(str, enum.Enum):
    CRASH = "crash"
    EQUIVOCATE = "equivocate"
    CENSOR = "censor"
    DELAY_MAX = "delay_max"


class CorruptionMode(str, enum.Enum):
    STATIC = "static"
    ADAPTIVE_RANDOM = "adaptive_random"
    ADAPTIVE_LEADER = "adaptive_leader"


@dataclass(frozen=True)
class AdversaryState:
    """
    Corrupted nodes plus corruptions waiting for activation.

    ``pending`` holds ``(node, activate_at_round)`` pairs.
    """
    budget: int
    mode: CorruptionMode = CorruptionMode.STATIC
    nodes: Tuple[int, ...] = ()
    corrupt: FrozenSet[int] = frozenset()
    pending: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        scheduled = set(self.corrupt) | {node for node, _ in self.pending}
        assert len(scheduled) <= self.budget, (
            f"adversary budget {self.budget} exceeded: {sorted(scheduled)}"
        )

    @property
    def scheduled(self) -> FrozenSet[int]:
        return frozenset(self.corrupt) | {node for node, _ in self.pending}

    def is_corrupt(self, node: int) -> bool:
        return node in self.corrupt


def initial_adversary(budget: int, mode: CorruptionMode, nodes: Sequence[int],
                      rng: np.random.Generator, initial: Sequence[int] = ()) -> AdversaryState:
    """
    Starting adversary. Static corruption picks its f nodes up front
    (``initial`` when given, otherwise a seeded sample); adaptive modes start
    with nobody corrupted.
    """
    mode = CorruptionMode(mode)
    nodes = tuple(nodes)
    corrupt: FrozenSet[int] = frozenset()
    if mode is CorruptionMode.STATIC and budget > 0:
        if initial:
            corrupt = frozenset(initial)
        else:
            chosen = rng.choice(len(nodes), size=min(budget, len(nodes)), replace=False)
            corrupt = frozenset(nodes[int(i)] for i in chosen)
    return AdversaryState(budget=budget, mode=mode, nodes=nodes, corrupt=corrupt)


def adversary_step(adv: AdversaryState, round_end: int, rng: np.random.Generator,
                   leader: Optional[int] = None) -> AdversaryState:
    """
    End-of-round adversary move.

    Pending corruptions due at ``round_end`` activate, then an adaptive
    adversary may pick one new target that activates a round later.

    Args:
        adv: Current adversary state
        round_end: Height whose commit ends the round
        rng: Seeded generator for target choice
        leader: Leader of the round that just ended (adaptive_leader target)
    """
    due = {node for node, at in adv.pending if at <= round_end}
    corrupt = frozenset(adv.corrupt) | due
    pending = [(node, at) for node, at in adv.pending if at > round_end]
    taken = corrupt | {node for node, _ in pending}
    if len(taken) < adv.budget:
        target = None
        if adv.mode is CorruptionMode.ADAPTIVE_RANDOM:
            candidates = [n for n in adv.nodes if n not in taken]
            if candidates:
                target = candidates[int(rng.integers(len(candidates)))]
        elif adv.mode is CorruptionMode.ADAPTIVE_LEADER and leader is not None and leader not in taken:
            target = leader
        if target is not None:
            pending.append((target, round_end + 1))
            logger.debug(f"adversary targets node {target} at end of round {round_end}")
    return dataclasses.replace(adv, corrupt=corrupt, pending=tuple(pending))


class Behaviour:
    """Honest-by-default hooks; subclasses override what their policy changes."""
    policy: Optional[AdversaryPolicy] = None
    drops_all = False
    max_delay = False
    censors = False

    def transform(self, ctx: ReplicaContext, out: List[Outbound]) -> List[Outbound]:
        return out

    def on_deliver(self, ctx: ReplicaContext, msg) -> List[Outbound]:
        return []


class CrashBehaviour(Behaviour):
    policy = AdversaryPolicy.CRASH
    drops_all = True


class DelayMaxBehaviour(Behaviour):
    policy = AdversaryPolicy.DELAY_MAX
    max_delay = True


class CensorBehaviour(Behaviour):
    """Proposes empty blocks and, as a subleader, swallows relayed votes."""
    policy = AdversaryPolicy.CENSOR
    censors = True

    def transform(self, ctx, out):
        kept = []
        for item in out:
            if (isinstance(item, Send) and isinstance(item.msg, VoteBatch)
                    and any(v.voter != ctx.node_id for v in item.msg.votes)):
                kept.append(Emit("censor_relay", item.msg.votes[0].height, item.msg.votes[0].view))
                continue
            kept.append(item)
        return kept


class EquivocateBehaviour(Behaviour):
    """
    As leader, sends one block to half of the replicas and a conflicting
    block to the rest. Prepare-votes for every proposal it sees.
    """
    policy = AdversaryPolicy.EQUIVOCATE

    def transform(self, ctx, out):
        result: List[Outbound] = []
        for item in out:
            if isinstance(item, Broadcast) and isinstance(item.msg, ProposalMsg):
                result.extend(self._split(ctx, item.msg))
            else:
                result.append(item)
        return result

    def _split(self, ctx: ReplicaContext, proposal: ProposalMsg) -> List[Outbound]:
        block = proposal.block
        other = dataclasses.replace(block, payload=block.payload + (EQUIVOCATION_MARKER,))
        twin = dataclasses.replace(
            proposal,
            block=other,
            signature=ctx.keypair.sign(proposal_message(proposal.height, proposal.view, other.digest)),
        )
        peers = [node for node in ctx.roster.node_ids if node != ctx.node_id]
        half = len(peers) // 2
        sends: List[Outbound] = [Emit("equivocate", proposal.height, proposal.view, other.digest)]
        sends += [Send(node, proposal) for node in peers[:half]]
        sends += [Send(node, twin) for node in peers[half:]]
        sends.append(Send(ctx.node_id, self._prepare_vote(ctx, twin)))
        return sends

    @staticmethod
    def _prepare_vote(ctx: ReplicaContext, proposal: ProposalMsg) -> Vote:
        digest = proposal.block.digest
        signature = ctx.keypair.sign(vote_message(Phase.PREPARE, digest, proposal.height, proposal.view))
        return Vote(ctx.node_id, Phase.PREPARE, digest, proposal.height, proposal.view, signature)

    def on_deliver(self, ctx, msg):
        if not isinstance(msg, ProposalMsg) or msg.sender == ctx.node_id:
            return []
        return [Send(ctx.leader(msg.view), self._prepare_vote(ctx, msg))]


_BEHAVIOURS = {
    AdversaryPolicy.CRASH: CrashBehaviour,
    AdversaryPolicy.EQUIVOCATE: EquivocateBehaviour,
    AdversaryPolicy.CENSOR: CensorBehaviour,
    AdversaryPolicy.DELAY_MAX: DelayMaxBehaviour,
}


def behaviour_for(policy: AdversaryPolicy) -> Behaviour:
    return _BEHAVIOURS[AdversaryPolicy(policy)]()
