"""
Scenario configuration for simulation runs
"""

import dataclasses
import enum
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .adversary import AdversaryPolicy, CorruptionMode
from .errors import ConfigurationError
from .signing import SignatureScheme

ENV_PREFIX = "BEACON_BFT_"
MAX_SEED = 2 ** 64 - 1


class BeaconBackend(str, enum.Enum):
    THRESHOLD = "threshold"
    MOCK = "mock"


@dataclass(frozen=True)
class Scenario:
    """
    Every knob of one simulated execution.

    Fields left as None are derived from the others by :meth:`resolved`:
    ``pre_gst_max_delay`` = 100 delta, ``timeout_base`` = 4 delta,
    ``branching`` = ceil(sqrt(n - 1)), ``max_time`` from the round count.

    ``inject_fork_at`` writes a conflicting commit record at that height into
    the trace; it exists only as a negative control for the safety checker.
    """
    n: int = 4
    f: int = 1
    gst: float = 0.0
    delta: float = 1.0
    pre_gst_max_delay: Optional[float] = None
    min_delay: float = 0.0
    rounds: int = 10
    seed: int = 0
    adversary_policy: AdversaryPolicy = AdversaryPolicy.CRASH
    corruption: CorruptionMode = CorruptionMode.STATIC
    initial_corrupt: Tuple[int, ...] = ()
    beacon_backend: BeaconBackend = BeaconBackend.MOCK
    beacon_threshold: Optional[int] = None
    branching: Optional[int] = None
    block_cap: int = 1000
    timeout_base: Optional[float] = None
    signature_scheme: SignatureScheme = SignatureScheme.ED25519
    tx_rate: float = 1.0
    allow_unsafe: bool = False
    record_messages: bool = False
    max_time: Optional[float] = None
    inject_fork_at: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "adversary_policy", AdversaryPolicy(self.adversary_policy))
        object.__setattr__(self, "corruption", CorruptionMode(self.corruption))
        object.__setattr__(self, "beacon_backend", BeaconBackend(self.beacon_backend))
        object.__setattr__(self, "signature_scheme", SignatureScheme(self.signature_scheme))
        object.__setattr__(self, "initial_corrupt", tuple(int(i) for i in self.initial_corrupt))

    def resolved(self) -> "Scenario":
        """Copy with every derived default filled in."""
        timeout_base = self.timeout_base if self.timeout_base is not None else 4 * self.delta
        pre_gst = self.pre_gst_max_delay if self.pre_gst_max_delay is not None else 100 * self.delta
        branching = self.branching if self.branching is not None else max(1, math.ceil(math.sqrt(max(self.n - 1, 1))))
        max_time = self.max_time
        if max_time is None:
            max_time = self.gst + pre_gst + self.rounds * 32 * timeout_base + 1000 * self.delta
        return dataclasses.replace(self, timeout_base=timeout_base, pre_gst_max_delay=pre_gst,
                                   branching=branching, max_time=max_time)

    def validate(self) -> Tuple[bool, List[str]]:
        """
        Check the scenario.

        Returns:
            (is_valid, list_of_problems)
        """
        problems: List[str] = []
        s = self.resolved()

        if s.n < 1:
            problems.append("n must be at least 1")
        if s.f < 0:
            problems.append("f must be non-negative")
        elif not s.allow_unsafe and s.n != 3 * s.f + 1:
            problems.append(f"n={s.n} must equal 3f+1={3 * s.f + 1} (set allow_unsafe to override)")
        elif s.f > s.n:
            problems.append("f cannot exceed n")

        for name in ("gst", "delta", "pre_gst_max_delay", "min_delay", "timeout_base", "max_time", "tx_rate"):
            value = getattr(s, name)
            if not math.isfinite(value):
                problems.append(f"{name} must be finite")
        if s.gst < 0:
            problems.append("gst must be non-negative")
        if s.delta <= 0:
            problems.append("delta must be positive")
        if not 0 <= s.min_delay <= s.delta:
            problems.append("min_delay must lie in [0, delta]")
        if s.pre_gst_max_delay < s.delta:
            problems.append("pre_gst_max_delay must be at least delta")
        if s.timeout_base <= 0:
            problems.append("timeout_base must be positive")
        if s.rounds < 1:
            problems.append("rounds must be at least 1")
        if not 0 <= s.seed <= MAX_SEED:
            problems.append("seed must be a 64-bit unsigned integer")
        if s.branching < 1:
            problems.append("branching must be at least 1")
        if s.block_cap < 0:
            problems.append("block_cap must be non-negative")
        if s.tx_rate < 0:
            problems.append("tx_rate must be non-negative")
        if s.initial_corrupt:
            if s.corruption is not CorruptionMode.STATIC:
                problems.append("initial_corrupt requires static corruption")
            if len(set(s.initial_corrupt)) > s.f:
                problems.append("initial_corrupt exceeds the corruption budget f")
            if any(not 0 <= i < s.n for i in s.initial_corrupt):
                problems.append("initial_corrupt names a node outside 0..n-1")
        if s.beacon_threshold is not None and not 1 <= s.beacon_threshold <= s.n:
            problems.append("beacon_threshold must satisfy 1 <= t <= n")
        if s.inject_fork_at is not None and s.inject_fork_at < 0:
            problems.append("inject_fork_at must be a non-negative height")

        return not problems, problems

    def checked(self) -> "Scenario":
        """Resolved scenario, or ConfigurationError listing every problem."""
        ok, problems = self.validate()
        if not ok:
            raise ConfigurationError(problems)
        return self.resolved()

    def to_json(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, enum.Enum):
                data[key] = value.value
            elif isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Scenario":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError([f"unknown scenario field '{k}'" for k in unknown])
        try:
            return cls(**dict(data))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError([str(exc)]) from exc

    def with_overrides(self, **overrides: Any) -> "Scenario":
        values = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **values) if values else self


def _coerce(field_type: Any, raw: str) -> Any:
    text = str(field_type)
    if "bool" in text:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if "Tuple" in text or "tuple" in text:
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if "float" in text:
        return float(raw)
    if "int" in text:
        return int(raw, 0)
    return raw


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Scenario fields set through ``BEACON_BFT_<FIELD>`` environment variables."""
    environ = os.environ if environ is None else environ
    values: Dict[str, Any] = {}
    problems: List[str] = []
    for f in dataclasses.fields(Scenario):
        key = ENV_PREFIX + f.name.upper()
        if key not in environ:
            continue
        try:
            values[f.name] = _coerce(f.type, environ[key])
        except ValueError:
            problems.append(f"{key}: cannot parse '{environ[key]}'")
    if problems:
        raise ConfigurationError(problems)
    return values


def load_scenario(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None,
                  **overrides: Any) -> Scenario:
    """
    Build a scenario from defaults, a JSON file, the environment and explicit
    overrides (in increasing precedence), then validate it.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError([f"cannot read scenario {path}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigurationError([f"scenario {path} must be a JSON object"])
    data.update(env_overrides(environ))
    scenario = Scenario.from_json(data).with_overrides(**overrides)
    return scenario.checked()


def load_matrix(path: str) -> List[Scenario]:
    """Sweep matrix: a JSON list of scenarios, or {"base": {...}, "scenarios": [...]}."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError([f"cannot read matrix {path}: {exc}"]) from exc
    base: Dict[str, Any] = {}
    if isinstance(data, dict):
        base = dict(data.get("base", {}))
        data = data.get("scenarios", [])
    if not isinstance(data, list):
        raise ConfigurationError([f"matrix {path} must list scenarios"])
    return [Scenario.from_json({**base, **row}) for row in data]
