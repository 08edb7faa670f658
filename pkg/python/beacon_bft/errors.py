"""
Exception hierarchy for the beacon_bft package
"""

import enum
from typing import Iterable, List


class BeaconBftError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(BeaconBftError, ValueError):
    """A numeric or structural parameter is outside its allowed range."""


class InsufficientSharesError(BeaconBftError):
    """Fewer than t valid partial signatures were supplied."""

    def __init__(self, valid: int, threshold: int):
        super().__init__(f"need {threshold} valid partial signatures, got {valid}")
        self.valid = valid
        self.threshold = threshold


class AdmissionReason(enum.Enum):
    UNTRUSTED_ISSUER = "untrusted"
    SYBIL = "sybil"
    FORGERY = "forgery"
    DUPLICATE_KEY = "duplicate-key"


class AdmissionError(BeaconBftError):
    """A credential was refused by the roster."""

    def __init__(self, reason: AdmissionReason, detail: str = ""):
        message = reason.value if not detail else f"{reason.value}: {detail}"
        super().__init__(message)
        self.reason = reason


class NotLeaderError(BeaconBftError):
    """A replica tried to propose in a view it does not lead."""


class InsufficientVotesError(BeaconBftError):
    """A certificate was requested with fewer than quorum distinct valid votes."""

    def __init__(self, distinct: int, quorum: int):
        super().__init__(f"need {quorum} distinct valid votes, got {distinct}")
        self.distinct = distinct
        self.quorum = quorum


class EmptyRosterError(BeaconBftError, ValueError):
    """Leader election or tree construction on a roster with no members."""


class ConfigurationError(BeaconBftError, ValueError):
    """A scenario or run configuration failed validation."""

    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("; ".join(self.problems) or "invalid configuration")
