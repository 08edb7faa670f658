"""
Identity-gated, permissionless membership.

Node admission is modelled with issuer-signed credentials: a trusted
issuer binds a node's consensus key to a nullifier derived from the
holder's identity, and the roster admits at most one active member per
nullifier. Roster transitions are pure functions returning a new roster.
"""

import functools
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .encoding import Writer, sha256, u64
from .errors import AdmissionError, AdmissionReason, ParameterError
from .signing import KeyPair, SignatureScheme, verify

logger = logging.getLogger(__name__)

NULLIFIER_TAG = b"beacon-bft/nullifier/v1"
CREDENTIAL_TAG = b"beacon-bft/credential/v1"

NodeId = int


@dataclass(frozen=True)
class Issuer:
    """A credential issuer with an Ed25519 signing key."""
    issuer_id: str
    keypair: KeyPair = field(repr=False)

    @classmethod
    def generate(cls, issuer_id: str, seed: Union[int, bytes] = 0) -> "Issuer":
        if isinstance(seed, int):
            seed = u64(seed)
        return cls(issuer_id, KeyPair.from_seed(SignatureScheme.ED25519, issuer_id.encode() + seed))

    @property
    def verification_key(self) -> bytes:
        return self.keypair.public_key


def compute_nullifier(issuer_id: str, identity_commitment: bytes) -> bytes:
    """H(issuer_id || identity_commitment): one nullifier per identity and issuer."""
    return sha256(Writer(NULLIFIER_TAG).blob(issuer_id.encode()).blob(identity_commitment).getvalue())


@dataclass(frozen=True)
class Credential:
    issuer_id: str
    nullifier: bytes
    node_public_key: bytes
    signature: bytes

    @property
    def signed_message(self) -> bytes:
        return credential_message(self.nullifier, self.node_public_key)

    def to_json(self) -> Dict[str, str]:
        return {
            "issuer_id": self.issuer_id,
            "nullifier_hex": self.nullifier.hex(),
            "node_public_key_hex": self.node_public_key.hex(),
            "signature_hex": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, str]) -> "Credential":
        return cls(
            issuer_id=data["issuer_id"],
            nullifier=bytes.fromhex(data["nullifier_hex"]),
            node_public_key=bytes.fromhex(data["node_public_key_hex"]),
            signature=bytes.fromhex(data["signature_hex"]),
        )


def credential_message(nullifier: bytes, node_public_key: bytes) -> bytes:
    return Writer(CREDENTIAL_TAG).blob(nullifier).blob(node_public_key).getvalue()


def issue_credential(issuer: Issuer, identity_commitment: bytes, node_public_key: bytes) -> Credential:
    """Bind ``node_public_key`` to the identity behind ``identity_commitment``."""
    nullifier = compute_nullifier(issuer.issuer_id, identity_commitment)
    signature = issuer.keypair.sign(credential_message(nullifier, node_public_key))
    return Credential(issuer.issuer_id, nullifier, bytes(node_public_key), signature)


TrustedIssuers = Union[Mapping[str, bytes], Iterable[Issuer]]


def trust_map(trusted_issuers: TrustedIssuers) -> Dict[str, bytes]:
    """Normalise a set of issuers (or an id -> key mapping) to id -> key."""
    if isinstance(trusted_issuers, Mapping):
        return dict(trusted_issuers)
    return {issuer.issuer_id: issuer.verification_key for issuer in trusted_issuers}


def verify_credential(cred: Credential, trusted_issuers: TrustedIssuers) -> Optional[AdmissionReason]:
    """Return None for a valid credential, otherwise the rejection reason."""
    keys = trust_map(trusted_issuers)
    if cred.issuer_id not in keys:
        return AdmissionReason.UNTRUSTED_ISSUER
    if not verify(SignatureScheme.ED25519, keys[cred.issuer_id], cred.signed_message, cred.signature):
        return AdmissionReason.FORGERY
    return None


@dataclass(frozen=True)
class RosterMember:
    node_id: NodeId
    public_key: bytes
    nullifier: bytes = b""


@dataclass(frozen=True)
class Roster:
    """
    Epoch roster. Members are kept sorted by node id, so every replica that
    applies the same transitions derives the same roster.
    """
    epoch: int = 0
    members: Tuple[RosterMember, ...] = ()
    nullifier_set: FrozenSet[bytes] = frozenset()
    next_node_id: int = 0
    allow_rejoin: bool = True

    def __post_init__(self):
        ordered = tuple(sorted(self.members, key=lambda m: m.node_id))
        ids = [m.node_id for m in ordered]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate node id in roster")
        object.__setattr__(self, "members", ordered)
        object.__setattr__(self, "nullifier_set", frozenset(self.nullifier_set))
        if ordered and self.next_node_id <= ordered[-1].node_id:
            object.__setattr__(self, "next_node_id", ordered[-1].node_id + 1)

    @classmethod
    def from_public_keys(cls, public_keys: Sequence[bytes], epoch: int = 0) -> "Roster":
        """Genesis roster with node ids 0..n-1 and key-derived nullifiers."""
        members = tuple(
            RosterMember(i, bytes(pk), sha256(NULLIFIER_TAG, b"genesis", bytes(pk)))
            for i, pk in enumerate(public_keys)
        )
        return cls(epoch=epoch, members=members,
                   nullifier_set=frozenset(m.nullifier for m in members))

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def fault_bound(self) -> int:
        """f = floor((n-1)/3)."""
        return max(self.size - 1, 0) // 3

    @property
    def quorum(self) -> int:
        return required_quorum(self.size)

    @property
    def node_ids(self) -> Tuple[NodeId, ...]:
        return tuple(m.node_id for m in self.members)

    @functools.cached_property
    def _by_id(self) -> Dict[NodeId, RosterMember]:
        return {m.node_id: m for m in self.members}

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._by_id

    def member(self, node_id: NodeId) -> RosterMember:
        return self._by_id[node_id]

    def public_key(self, node_id: NodeId) -> bytes:
        return self._by_id[node_id].public_key

    @property
    def active_nullifiers(self) -> FrozenSet[bytes]:
        return frozenset(m.nullifier for m in self.members)

    def to_json(self) -> Dict[str, object]:
        return {
            "epoch": self.epoch,
            "members": [
                {"id": m.node_id, "pubkey_hex": m.public_key.hex(), "nullifier_hex": m.nullifier.hex()}
                for m in self.members
            ],
            "nullifiers": sorted(n.hex() for n in self.nullifier_set),
            "next_node_id": self.next_node_id,
            "allow_rejoin": self.allow_rejoin,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, object]) -> "Roster":
        members = tuple(
            RosterMember(int(m["id"]), bytes.fromhex(m["pubkey_hex"]), bytes.fromhex(m.get("nullifier_hex", "")))
            for m in data.get("members", [])
        )
        return cls(
            epoch=int(data.get("epoch", 0)),
            members=members,
            nullifier_set=frozenset(bytes.fromhex(h) for h in data.get("nullifiers", [])),
            next_node_id=int(data.get("next_node_id", 0)),
            allow_rejoin=bool(data.get("allow_rejoin", True)),
        )


def required_quorum(n: int) -> int:
    """n - floor((n-1)/3); equals 2f+1 when n = 3f+1."""
    return n - max(n - 1, 0) // 3


def admit(roster: Roster, cred: Credential, trusted_issuers: TrustedIssuers,
          node_id: Optional[NodeId] = None) -> Roster:
    """
    Admit a credential holder as a new member (the epoch is unchanged).

    Args:
        roster: Current roster
        cred: Credential presented by the joining node
        trusted_issuers: Issuers (or issuer id -> verification key) accepted
        node_id: Explicit id for the new member; defaults to the next free id

    Returns:
        New roster containing the member and its nullifier

    Raises:
        AdmissionError: untrusted issuer, forged signature, reused nullifier
            or a consensus key that is already a member's
    """
    reason = verify_credential(cred, trusted_issuers)
    if reason is None:
        if cred.nullifier in roster.active_nullifiers:
            reason = AdmissionReason.SYBIL
        elif cred.nullifier in roster.nullifier_set and not roster.allow_rejoin:
            reason = AdmissionReason.SYBIL
        elif any(m.public_key == cred.node_public_key for m in roster.members):
            reason = AdmissionReason.DUPLICATE_KEY
    if reason is not None:
        logger.warning(f"admission rejected ({reason.value}) for nullifier {cred.nullifier.hex()[:16]}")
        raise AdmissionError(reason, cred.nullifier.hex())

    if node_id is None:
        node_id = roster.next_node_id
    elif node_id in roster:
        raise ParameterError(f"node id {node_id} already in roster")

    member = RosterMember(node_id, cred.node_public_key, cred.nullifier)
    return replace(
        roster,
        members=roster.members + (member,),
        nullifier_set=roster.nullifier_set | {cred.nullifier},
        next_node_id=max(roster.next_node_id, node_id + 1),
    )


@dataclass(frozen=True)
class EpochReport:
    """Joins skipped and leaves ignored by one epoch transition."""
    skipped: Tuple[Tuple[Credential, AdmissionReason], ...] = ()
    unknown_leaves: Tuple[NodeId, ...] = ()
    admitted: Tuple[NodeId, ...] = ()
    removed: Tuple[NodeId, ...] = ()


def advance_epoch(roster: Roster, joins: Iterable[Credential], leaves: Iterable[NodeId],
                  trusted_issuers: TrustedIssuers) -> Tuple[Roster, EpochReport]:
    """
    Apply one epoch of leaves and joins.

    Leaves are applied first; their nullifiers stay recorded. Joins are
    processed in canonical (nullifier, node key) order, so the batch order
    never matters and a duplicated nullifier goes to the smallest node key.
    """
    unknown: List[NodeId] = []
    removed: List[NodeId] = []
    current = roster
    for node_id in sorted(set(leaves)):
        if node_id not in current:
            logger.info(f"epoch {roster.epoch + 1}: leave of unknown node {node_id} ignored")
            unknown.append(node_id)
            continue
        current = replace(current, members=tuple(m for m in current.members if m.node_id != node_id))
        removed.append(node_id)

    skipped: List[Tuple[Credential, AdmissionReason]] = []
    admitted: List[NodeId] = []
    for cred in sorted(joins, key=lambda c: (c.nullifier, c.node_public_key)):
        try:
            current = admit(current, cred, trusted_issuers)
        except AdmissionError as exc:
            skipped.append((cred, exc.reason))
            continue
        admitted.append(current.next_node_id - 1)

    report = EpochReport(tuple(skipped), tuple(unknown), tuple(admitted), tuple(removed))
    logger.info(
        f"epoch {roster.epoch} -> {roster.epoch + 1}: +{len(admitted)} -{len(removed)}, "
        f"{len(skipped)} joins skipped"
    )
    return replace(current, epoch=roster.epoch + 1), report
