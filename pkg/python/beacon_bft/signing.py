"""
Signature schemes for votes, view changes and issuer credentials.

Two interchangeable schemes sit behind the same functions:

* ``ED25519`` - individual Ed25519 signatures; an aggregate is the
  concatenation of the signers' signatures in signer order.
* ``BLS`` - BLS12-381 multi-signatures (min-pk, proof-of-possession
  ciphersuite); an aggregate is a single G2 point.

Verification is a pure function of (scheme, key, message, signature) and
is memoised, so replicas inside one simulated process that check the same
certificate pay for each signature only once.
"""

import enum
import functools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from py_ecc.bls import G2ProofOfPossession as bls_pop

from .encoding import sha256

logger = logging.getLogger(__name__)

ED25519_SIGNATURE_SIZE = 64


class SignatureScheme(str, enum.Enum):
    ED25519 = "ed25519"
    BLS = "bls"


@dataclass(frozen=True)
class KeyPair:
    """A signing key with its public verification key."""
    scheme: SignatureScheme
    public_key: bytes
    _secret: Any = field(repr=False, compare=False)

    @classmethod
    def from_seed(cls, scheme: SignatureScheme, seed: bytes) -> "KeyPair":
        """Derive a keypair deterministically from ``seed`` (any length)."""
        scheme = SignatureScheme(scheme)
        ikm = sha256(b"beacon-bft/key", scheme.value.encode(), seed)
        if scheme is SignatureScheme.ED25519:
            secret = Ed25519PrivateKey.from_private_bytes(ikm)
            public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        else:
            secret = bls_pop.KeyGen(ikm)
            public = bls_pop.SkToPk(secret)
        return cls(scheme=scheme, public_key=public, _secret=secret)

    def sign(self, message: bytes) -> bytes:
        if self.scheme is SignatureScheme.ED25519:
            return self._secret.sign(message)
        return bls_pop.Sign(self._secret, message)


@functools.lru_cache(maxsize=1 << 18)
def verify(scheme: SignatureScheme, public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Check one signature; malformed keys or signatures verify as False."""
    scheme = SignatureScheme(scheme)
    if scheme is SignatureScheme.ED25519:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False
    try:
        return bool(bls_pop.Verify(public_key, message, signature))
    except Exception:  # py_ecc raises assorted errors on undecodable points
        return False


def aggregate(scheme: SignatureScheme, signatures: Sequence[bytes]) -> bytes:
    """Combine signatures over one message, in signer order."""
    scheme = SignatureScheme(scheme)
    if scheme is SignatureScheme.ED25519:
        return b"".join(signatures)
    return bls_pop.Aggregate(list(signatures))


@functools.lru_cache(maxsize=1 << 14)
def _verify_bls_aggregate(public_keys: tuple, message: bytes, signature: bytes) -> bool:
    try:
        return bool(bls_pop.FastAggregateVerify(list(public_keys), message, signature))
    except Exception:
        return False


def verify_aggregate(scheme: SignatureScheme, public_keys: Sequence[bytes],
                     message: bytes, signature: bytes) -> bool:
    """Check an aggregate produced by :func:`aggregate` for ``public_keys`` in order."""
    scheme = SignatureScheme(scheme)
    if not public_keys:
        return False
    if scheme is SignatureScheme.ED25519:
        if len(signature) != ED25519_SIGNATURE_SIZE * len(public_keys):
            return False
        for i, key in enumerate(public_keys):
            chunk = signature[i * ED25519_SIGNATURE_SIZE:(i + 1) * ED25519_SIGNATURE_SIZE]
            if not verify(scheme, key, message, chunk):
                return False
        return True
    return _verify_bls_aggregate(tuple(public_keys), message, signature)
