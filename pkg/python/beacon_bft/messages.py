"""
Consensus wire types and their canonical encodings.

Every signed message covers a tagged, fixed-order encoding. Blocks are
identified by the SHA-256 digest of their encoding.
"""

import enum
import functools
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .encoding import DIGEST_SIZE, Reader, Writer, sha256
from .signing import SignatureScheme

BLOCK_TAG = b"beacon-bft/block/v1"
VOTE_TAG = b"beacon-bft/vote/v1"
QC_TAG = b"beacon-bft/qc/v1"
PROPOSAL_TAG = b"beacon-bft/proposal/v1"
VIEW_CHANGE_TAG = b"beacon-bft/view-change/v1"

GENESIS_DIGEST = bytes(DIGEST_SIZE)

NodeId = int


class Phase(enum.IntEnum):
    PREPARE = 1
    COMMIT = 2


@dataclass(frozen=True)
class BlockProposal:
    height: int
    view: int
    parent_digest: bytes
    payload: Tuple[bytes, ...]
    proposer: NodeId

    def encode(self) -> bytes:
        return (Writer(BLOCK_TAG).u64(self.height).u64(self.view).blob(self.parent_digest)
                .seq(self.payload, Writer.blob).u64(self.proposer).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "BlockProposal":
        r = Reader(data, BLOCK_TAG)
        block = cls(height=r.u64(), view=r.u64(), parent_digest=r.blob(),
                    payload=tuple(r.seq(Reader.blob)), proposer=r.u64())
        r.finish()
        return block

    @functools.cached_property
    def digest(self) -> bytes:
        return sha256(self.encode())


def vote_message(phase: Phase, block_digest: bytes, height: int, view: int) -> bytes:
    """Bytes signed by a vote: phase || digest || height || view."""
    return Writer(VOTE_TAG).u8(int(phase)).blob(block_digest).u64(height).u64(view).getvalue()


@dataclass(frozen=True)
class Vote:
    voter: NodeId
    phase: Phase
    block_digest: bytes
    height: int
    view: int
    signature: bytes

    @property
    def message(self) -> bytes:
        return vote_message(self.phase, self.block_digest, self.height, self.view)


@dataclass(frozen=True)
class QuorumCertificate:
    """
    Aggregate of quorum-many votes of one phase on one (digest, height, view).

    ``aggregate_signature`` is produced by :func:`signing.aggregate` over the
    votes of ``signers`` taken in ascending id order.
    """
    phase: Phase
    block_digest: bytes
    height: int
    view: int
    signers: Tuple[NodeId, ...]
    aggregate_signature: bytes
    scheme: SignatureScheme = SignatureScheme.ED25519

    @property
    def message(self) -> bytes:
        return vote_message(self.phase, self.block_digest, self.height, self.view)

    def encode(self) -> bytes:
        return (Writer(QC_TAG).u8(int(self.phase)).blob(self.block_digest).u64(self.height)
                .u64(self.view).seq(self.signers, Writer.u64).blob(self.aggregate_signature)
                .blob(SignatureScheme(self.scheme).value.encode()).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "QuorumCertificate":
        r = Reader(data, QC_TAG)
        qc = cls(phase=Phase(r.u8()), block_digest=r.blob(), height=r.u64(), view=r.u64(),
                 signers=tuple(r.seq(Reader.u64)), aggregate_signature=r.blob(),
                 scheme=SignatureScheme(r.blob().decode()))
        r.finish()
        return qc

    @functools.cached_property
    def hex(self) -> str:
        return self.encode().hex()

    def to_json(self) -> Dict[str, object]:
        return {
            "phase": self.phase.name.lower(),
            "block_digest": self.block_digest.hex(),
            "height": self.height,
            "view": self.view,
            "signers": list(self.signers),
            "aggregate_signature": self.aggregate_signature.hex(),
            "scheme": SignatureScheme(self.scheme).value,
        }


CommitCertificate = QuorumCertificate


@dataclass(frozen=True)
class LogEntry:
    block: BlockProposal
    cert: QuorumCertificate


def view_change_message(height: int, view: int, lock_digest: bytes, lock_view: int) -> bytes:
    return (Writer(VIEW_CHANGE_TAG).u64(height).u64(view).blob(lock_digest)
            .u64(lock_view).getvalue())


@dataclass(frozen=True)
class ViewChangeMsg:
    """
    Sent to the leader of ``view`` on entering it. Carries the sender's
    lock, if any, as the locked block plus its prepare certificate.
    """
    sender: NodeId
    height: int
    view: int
    lock_block: Optional[BlockProposal]
    lock_qc: Optional[QuorumCertificate]
    signature: bytes

    @property
    def lock_view(self) -> int:
        return self.lock_qc.view + 1 if self.lock_qc is not None else 0

    @property
    def message(self) -> bytes:
        digest = self.lock_qc.block_digest if self.lock_qc is not None else b""
        return view_change_message(self.height, self.view, digest, self.lock_view)


def proposal_message(height: int, view: int, block_digest: bytes) -> bytes:
    return Writer(PROPOSAL_TAG).u64(height).u64(view).blob(block_digest).getvalue()


@dataclass(frozen=True)
class ProposalMsg:
    """
    Leader proposal for (height, view). ``justify`` is the prepare
    certificate of a re-proposed locked block; ``view_changes`` is the
    quorum of view-change messages that opened the view.
    """
    sender: NodeId
    height: int
    view: int
    block: BlockProposal
    justify: Optional[QuorumCertificate]
    view_changes: Tuple[ViewChangeMsg, ...]
    signature: bytes

    @property
    def message(self) -> bytes:
        return proposal_message(self.height, self.view, self.block.digest)


@dataclass(frozen=True)
class VoteBatch:
    """Votes relayed by a subleader (or a single vote sent directly)."""
    sender: NodeId
    votes: Tuple[Vote, ...]


@dataclass(frozen=True)
class CertificateMsg:
    sender: NodeId
    cert: QuorumCertificate
    block: BlockProposal


@dataclass(frozen=True)
class SyncRequest:
    sender: NodeId
    height: int


@dataclass(frozen=True)
class SyncMsg:
    sender: NodeId
    entries: Tuple[LogEntry, ...]


def message_height(msg) -> Optional[int]:
    """Height a protocol message refers to, or None for sync traffic."""
    if isinstance(msg, (ProposalMsg, ViewChangeMsg)):
        return msg.height
    if isinstance(msg, Vote):
        return msg.height
    if isinstance(msg, VoteBatch):
        return msg.votes[0].height if msg.votes else None
    if isinstance(msg, CertificateMsg):
        return msg.cert.height
    return None


def message_view(msg) -> Optional[int]:
    if isinstance(msg, (ProposalMsg, ViewChangeMsg, Vote)):
        return msg.view
    if isinstance(msg, VoteBatch):
        return msg.votes[0].view if msg.votes else None
    if isinstance(msg, CertificateMsg):
        return msg.cert.view
    return None


def message_sender(msg) -> NodeId:
    if isinstance(msg, Vote):
        return msg.voter
    return msg.sender
