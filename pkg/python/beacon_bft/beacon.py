"""
Distributed randomness beacon.

A t-of-n group is created with a locally simulated Joint-Feldman DKG over
BLS12-381. Each member signs the canonical round message with its share;
any t valid partial signatures interpolate to the unique group signature,
whose SHA-256 digest is the round's randomness. A hash-based mock beacon
with the same interface serves large simulations.
"""

import functools
import hashlib
import logging
import random
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from py_ecc import optimized_bls12_381 as bls12
from py_ecc.bls.g2_primitives import G1_to_pubkey, G2_to_signature, pubkey_to_G1, signature_to_G2
from py_ecc.bls.hash_to_curve import hash_to_G2

from .encoding import sha256, u64
from .errors import InsufficientSharesError, ParameterError

logger = logging.getLogger(__name__)

CURVE_ORDER = bls12.curve_order
DST = b"BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_NUL_"
ROUND_TAG = b"beacon-bft/round/v1"
MOCK_TAG = b"beacon-bft/mock/v1"
MOCK_PREFIX = b"mock:"
MAX_ROUND = 2 ** 64 - 1


@dataclass(frozen=True)
class SecretShare:
    """A member's share: ``value = F(index)`` for the summed DKG polynomial."""
    index: int
    value: int


@dataclass(frozen=True)
class PolynomialCommitment:
    """Feldman commitments ``g^a_j`` (compressed G1) to a degree t-1 polynomial."""
    coeff_commitments: Tuple[bytes, ...]

    @property
    def threshold(self) -> int:
        return len(self.coeff_commitments)


@dataclass(frozen=True)
class BeaconGroup:
    n: int
    t: int
    group_public_key: bytes
    member_public_keys: Tuple[bytes, ...]
    commitments: PolynomialCommitment
    qualified: Tuple[int, ...] = ()
    mock_seed: Optional[int] = None

    @property
    def is_mock(self) -> bool:
        return self.mock_seed is not None


@dataclass(frozen=True)
class PartialSignature:
    index: int
    round: int
    signature: bytes


@dataclass(frozen=True)
class BeaconOutput:
    round: int
    signature: bytes
    randomness: bytes
    mock: bool = False

    def to_json(self) -> Dict[str, object]:
        return {
            "round": self.round,
            "signature_hex": self.signature.hex(),
            "randomness_hex": self.randomness.hex(),
        }

    @classmethod
    def from_json(cls, data: Dict[str, object]) -> "BeaconOutput":
        signature = bytes.fromhex(str(data["signature_hex"]))
        return cls(
            round=int(data["round"]),
            signature=signature,
            randomness=bytes.fromhex(str(data["randomness_hex"])),
            mock=signature.startswith(MOCK_PREFIX),
        )


def default_threshold(n: int) -> int:
    """Majority threshold used when the caller does not choose one."""
    return n // 2 + 1


def round_message(round_number: int) -> bytes:
    """Canonical message M(round): domain tag followed by the 8-byte round."""
    if not 0 <= round_number <= MAX_ROUND:
        raise ParameterError(f"round {round_number} outside 0..2^64-1")
    return ROUND_TAG + u64(round_number)


@functools.lru_cache(maxsize=4096)
def _hash_round(round_number: int):
    return hash_to_G2(round_message(round_number), DST, hashlib.sha256)


@functools.lru_cache(maxsize=8192)
def _g1(encoded: bytes):
    return pubkey_to_G1(encoded)


def _eval_poly(coeffs: Sequence[int], x: int) -> int:
    result = 0
    for coeff in reversed(coeffs):
        result = (result * x + coeff) % CURVE_ORDER
    return result


def lagrange_coefficient(i: int, indices: Sequence[int]) -> int:
    """Coefficient of share ``i`` when interpolating ``indices`` at x = 0."""
    num, den = 1, 1
    for j in indices:
        if j == i:
            continue
        num = num * j % CURVE_ORDER
        den = den * (j - i) % CURVE_ORDER
    return num * pow(den, -1, CURVE_ORDER) % CURVE_ORDER


def interpolate_at_zero(shares: Sequence[SecretShare]) -> int:
    """Scalar Lagrange interpolation of ``shares`` at x = 0."""
    indices = [s.index for s in shares]
    return sum(lagrange_coefficient(s.index, indices) * s.value for s in shares) % CURVE_ORDER


def _commitment_at(commitments: PolynomialCommitment, index: int):
    point = bls12.Z1
    for j, encoded in enumerate(commitments.coeff_commitments):
        point = bls12.add(point, bls12.multiply(_g1(encoded), pow(index, j, CURVE_ORDER)))
    return point


def vss_verify_share(share: SecretShare, commitments: PolynomialCommitment) -> bool:
    """Feldman check ``g^value == prod_j C_j^(index^j)``."""
    if share.index < 1 or not commitments.coeff_commitments:
        return False
    try:
        expected = _commitment_at(commitments, share.index)
    except Exception:  # undecodable commitment
        return False
    return bls12.eq(bls12.multiply(bls12.G1, share.value % CURVE_ORDER), expected)


def dkg_run(n: int, t: int, rng_seed: int,
            faulty_dealers: Iterable[int] = ()) -> Tuple[BeaconGroup, List[SecretShare]]:
    """
    Run a Joint-Feldman DKG with every dealer simulated in-process.

    Args:
        n: Number of participants (indices 1..n)
        t: Signing threshold
        rng_seed: Seed for the dealers' coefficients
        faulty_dealers: Dealers that hand one receiver a corrupted share;
            the failed Feldman check counts as a complaint and disqualifies them

    Returns:
        (group, shares) with ``shares[i-1]`` belonging to participant i
    """
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    if not 1 <= t <= n:
        raise ParameterError(f"threshold t={t} must satisfy 1 <= t <= n={n}")

    rng = random.Random(rng_seed)
    faulty = set(faulty_dealers)
    dealt: Dict[int, Tuple[List[int], PolynomialCommitment, Dict[int, int]]] = {}

    for dealer in range(1, n + 1):
        coeffs = [rng.randrange(1, CURVE_ORDER) for _ in range(t)]
        commitment = PolynomialCommitment(
            tuple(G1_to_pubkey(bls12.multiply(bls12.G1, c)) for c in coeffs)
        )
        shares = {i: _eval_poly(coeffs, i) for i in range(1, n + 1)}
        if dealer in faulty:
            victim = dealer % n + 1
            shares[victim] = (shares[victim] + 1) % CURVE_ORDER
        dealt[dealer] = (coeffs, commitment, shares)

    qualified = []
    for dealer, (_, commitment, shares) in dealt.items():
        complaints = [i for i, value in shares.items()
                      if not vss_verify_share(SecretShare(i, value), commitment)]
        if complaints:
            logger.warning(f"DKG dealer {dealer} disqualified after complaints from {complaints}")
            continue
        qualified.append(dealer)

    if not qualified:
        raise ParameterError("no qualified dealers left after complaints")

    summed_points = [bls12.Z1] * t
    for dealer in qualified:
        for j, encoded in enumerate(dealt[dealer][1].coeff_commitments):
            summed_points[j] = bls12.add(summed_points[j], _g1(encoded))
    commitments = PolynomialCommitment(tuple(G1_to_pubkey(p) for p in summed_points))

    shares = [
        SecretShare(i, sum(dealt[d][2][i] for d in qualified) % CURVE_ORDER)
        for i in range(1, n + 1)
    ]
    member_keys = tuple(G1_to_pubkey(bls12.multiply(bls12.G1, s.value)) for s in shares)

    group = BeaconGroup(
        n=n,
        t=t,
        group_public_key=commitments.coeff_commitments[0],
        member_public_keys=member_keys,
        commitments=commitments,
        qualified=tuple(qualified),
    )
    logger.info(f"DKG complete: {t}-of-{n}, {len(qualified)} qualified dealers")
    return group, shares


def partial_sign(share: SecretShare, round_number: int) -> PartialSignature:
    """Deterministic BLS signature share on M(round)."""
    point = bls12.multiply(_hash_round(round_number), share.value % CURVE_ORDER)
    return PartialSignature(share.index, round_number, G2_to_signature(point))


@functools.lru_cache(maxsize=1 << 14)
def _pairing_check(public_key: bytes, round_number: int, signature: bytes) -> bool:
    try:
        sig_point = signature_to_G2(signature)
        key_point = _g1(public_key)
    except Exception:
        return False
    if not bls12.is_on_curve(sig_point, bls12.b2):
        return False
    # e(sig, g) * e(H(m), -pk) == 1 with a single final exponentiation
    product = (bls12.pairing(sig_point, bls12.G1, final_exponentiate=False)
               * bls12.pairing(_hash_round(round_number), bls12.neg(key_point), final_exponentiate=False))
    return bls12.final_exponentiate(product) == bls12.FQ12.one()


def verify_partial(partial: PartialSignature, group: BeaconGroup) -> bool:
    """Check a signature share against the member key at its index."""
    if group.is_mock or not 1 <= partial.index <= len(group.member_public_keys):
        return False
    if not 0 <= partial.round <= MAX_ROUND:
        return False
    return _pairing_check(group.member_public_keys[partial.index - 1], partial.round, partial.signature)


def aggregate(partials: Sequence[PartialSignature], group: BeaconGroup,
              round_number: Optional[int] = None) -> BeaconOutput:
    """
    Interpolate the group signature from at least t valid partials.

    Invalid or duplicate partials are dropped (and logged) before
    interpolation; the t lowest valid indices are used, and the result does
    not depend on which valid subset was supplied.

    Args:
        partials: Signature shares, in any order
        group: Group the shares belong to
        round_number: Round being signed; defaults to the round most
            partials claim (the lowest one on a tie)
    """
    if not partials:
        raise InsufficientSharesError(0, group.t)
    if round_number is None:
        counts = Counter(p.round for p in partials)
        round_number = min(counts, key=lambda r: (-counts[r], r))
    valid: Dict[int, PartialSignature] = {}
    for partial in sorted(partials, key=lambda p: p.index):
        if partial.index in valid:
            continue
        if partial.round != round_number or not verify_partial(partial, group):
            logger.warning(f"rejected invalid partial from index {partial.index} for round {round_number}")
            continue
        valid[partial.index] = partial

    if len(valid) < group.t:
        raise InsufficientSharesError(len(valid), group.t)

    chosen = sorted(valid)[:group.t]
    point = bls12.Z2
    for index in chosen:
        coeff = lagrange_coefficient(index, chosen)
        point = bls12.add(point, bls12.multiply(signature_to_G2(valid[index].signature), coeff))
    signature = G2_to_signature(point)
    return BeaconOutput(round=round_number, signature=signature, randomness=sha256(signature))


def mock_beacon(seed: int, round_number: int) -> BeaconOutput:
    """Hash-chain stand-in: randomness = H(seed || round)."""
    if not 0 <= seed <= MAX_ROUND:
        raise ParameterError(f"seed {seed} outside 0..2^64-1")
    randomness = sha256(MOCK_TAG, u64(seed), round_message(round_number))
    return BeaconOutput(round=round_number, signature=MOCK_PREFIX + randomness,
                        randomness=randomness, mock=True)


def mock_group(seed: int) -> BeaconGroup:
    """Group descriptor under which mock outputs for ``seed`` verify."""
    return BeaconGroup(
        n=1,
        t=1,
        group_public_key=sha256(MOCK_TAG, b"group", u64(seed)),
        member_public_keys=(),
        commitments=PolynomialCommitment(()),
        mock_seed=seed,
    )


@functools.lru_cache(maxsize=1 << 14)
def verify_output(out: BeaconOutput, group: BeaconGroup) -> bool:
    """Public verification of a beacon output."""
    if group.is_mock:
        return out.mock and out == mock_beacon(group.mock_seed, out.round)
    if out.mock or out.signature.startswith(MOCK_PREFIX):
        return False
    if not 0 <= out.round <= MAX_ROUND or out.randomness != sha256(out.signature):
        return False
    return _pairing_check(group.group_public_key, out.round, out.signature)


class MockBeacon:
    """Beacon service backed by :func:`mock_beacon`."""

    def __init__(self, seed: int):
        self.seed = seed
        self.group = mock_group(seed)

    @functools.lru_cache(maxsize=None)
    def output(self, round_number: int) -> BeaconOutput:
        return mock_beacon(self.seed, round_number)

    def verify(self, out: BeaconOutput) -> bool:
        return verify_output(out, self.group)


class ThresholdBeacon:
    """Beacon service backed by a DKG group; outputs are fetched on demand."""

    def __init__(self, group: BeaconGroup, shares: Sequence[SecretShare],
                 signers: Optional[Sequence[int]] = None):
        self.group = group
        self._shares = {s.index: s for s in shares}
        self._signers = list(signers) if signers is not None else sorted(self._shares)[:group.t]
        self._outputs: Dict[int, BeaconOutput] = {}

    @classmethod
    def create(cls, n: int, t: Optional[int], seed: int) -> "ThresholdBeacon":
        group, shares = dkg_run(n, t if t is not None else default_threshold(n), seed)
        return cls(group, shares)

    def output(self, round_number: int) -> BeaconOutput:
        if round_number not in self._outputs:
            partials = [partial_sign(self._shares[i], round_number) for i in self._signers]
            self._outputs[round_number] = aggregate(partials, self.group, round_number)
        return self._outputs[round_number]

    def verify(self, out: BeaconOutput) -> bool:
        return verify_output(out, self.group)


def transcript(service, rounds: int, start: int = 0) -> List[Dict[str, object]]:
    """JSON-ready transcript of ``rounds`` consecutive outputs."""
    return [service.output(r).to_json() for r in range(start, start + rounds)]
