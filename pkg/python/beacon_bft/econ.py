"""
Economic-safety formulas and the mining-reward (price of crypto-anarchy)
table recomputation.

Money is ``decimal.Decimal`` in US dollars throughout; probabilities and
ratios are Decimal as well so that no float round-off enters the
comparisons.
"""

import logging
from dataclasses import dataclass
from decimal import ROUND_FLOOR, Decimal
from typing import Any, Dict, List, Optional, Sequence, Union

from .errors import ParameterError

logger = logging.getLogger(__name__)

Number = Union[Decimal, int, float, str]

CURRENCY = "USD"
DAYS_PER_YEAR = 365
SECONDS_PER_DAY = 86400
TABLE_TOLERANCE = Decimal("0.005")


def D(value: Number) -> Decimal:
    """Decimal from int, str or float (floats go through their repr)."""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


def money(value: Number, currency: str = CURRENCY) -> Dict[str, str]:
    """JSON form of an amount, tagged with its currency."""
    return {"value": str(D(value)), "currency": currency}


def _probability(name: str, value: Decimal):
    if not Decimal(0) <= value <= Decimal(1):
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class PermissionlessParams:
    """Block reward R (coins), exchange rate x, maturation w, detection probability."""
    R: Decimal
    x: Decimal
    w: Decimal
    f_detect: Decimal = Decimal(1)

    def __post_init__(self):
        for name in ("R", "x", "w", "f_detect"):
            value = D(getattr(self, name))
            if value < 0:
                raise ParameterError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, value)
        _probability("f_detect", self.f_detect)


@dataclass(frozen=True)
class PermissionedParams:
    """Per-node penalties P_i, punishment probability tau, coalition size N."""
    penalties: Sequence[Decimal]
    tau: Decimal
    N: int
    f_detect: Decimal = Decimal(1)

    def __post_init__(self):
        penalties = tuple(D(p) for p in self.penalties)
        if any(p < 0 for p in penalties):
            raise ParameterError("penalties must be non-negative")
        object.__setattr__(self, "penalties", penalties)
        object.__setattr__(self, "tau", D(self.tau))
        object.__setattr__(self, "f_detect", D(self.f_detect))
        _probability("tau", self.tau)
        _probability("f_detect", self.f_detect)
        if self.N < 0:
            raise ParameterError(f"N must be non-negative, got {self.N}")

    def lowest_penalty_sum(self) -> Decimal:
        """Sum of the N smallest penalties (the cheapest coalition to punish)."""
        if self.N > len(self.penalties):
            raise ParameterError(f"N={self.N} exceeds the {len(self.penalties)} penalties given")
        return sum(sorted(self.penalties)[:self.N], Decimal(0))


def beta_permissionless(p: PermissionlessParams) -> Decimal:
    """Transaction value above which a permissionless chain is unsafe: f * w * R * x."""
    return p.f_detect * p.w * p.R * p.x


def beta_permissioned(p: PermissionedParams) -> Decimal:
    """
    Permissioned counterpart: f * tau * (sum of the N smallest penalties).

    Raises:
        ParameterError: N exceeds the number of penalties
    """
    return p.f_detect * p.tau * p.lowest_penalty_sum()


def permissioned_safer(p: PermissionedParams, q: PermissionlessParams) -> bool:
    """True iff tau * (N smallest penalties) > w * R * x (strict)."""
    return p.tau * p.lowest_penalty_sum() > q.w * q.R * q.x


def required_penalty_sum(q: PermissionlessParams, tau: Number) -> Decimal:
    """Smallest coalition penalty sum that beats a permissionless chain: w * R * x / tau."""
    tau = D(tau)
    if not Decimal(0) < tau <= Decimal(1):
        raise ParameterError(f"tau must lie in (0, 1], got {tau}")
    return q.w * q.R * q.x / tau


def min_block_reward(v_attack: Number, alpha: Number) -> Decimal:
    """Block reward infimum v_attack / alpha; rewards must strictly exceed it."""
    alpha = D(alpha)
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    return D(v_attack) / alpha


def poca_ratio(worst_nash_cost: Number, zkpoi_cost: Number) -> Decimal:
    """
    Price of crypto-anarchy: worst-equilibrium cost over the identity-based
    optimum. The latter is close to zero in practice, so callers pass a
    positive floor.
    """
    zkpoi_cost = D(zkpoi_cost)
    if zkpoi_cost <= 0:
        raise ParameterError(f"zk-PoI cost must be positive, got {zkpoi_cost}")
    return D(worst_nash_cost) / zkpoi_cost


@dataclass(frozen=True)
class CoinRow:
    name: str
    reward_per_block: Decimal
    blocks_per_day: Decimal
    price: Decimal
    market_cap: Optional[Decimal] = None

    def __post_init__(self):
        for name in ("reward_per_block", "blocks_per_day", "price"):
            value = D(getattr(self, name))
            if value < 0:
                raise ParameterError(f"{self.name}: {name} must be non-negative, got {value}")
            object.__setattr__(self, name, value)
        if self.market_cap is not None:
            object.__setattr__(self, "market_cap", D(self.market_cap))


def blocks_per_day(block_time_seconds: Number) -> Decimal:
    """Whole blocks per day for a given block interval."""
    seconds = D(block_time_seconds)
    if seconds <= 0:
        raise ParameterError(f"block time must be positive, got {seconds}")
    return (Decimal(SECONDS_PER_DAY) / seconds).to_integral_value(rounding=ROUND_FLOOR)


def yearly_reward(c: CoinRow) -> Decimal:
    """reward per block * blocks per day * 365 * price."""
    return c.reward_per_block * c.blocks_per_day * DAYS_PER_YEAR * c.price


def yearly_inflation(reward_fiat: Number, market_cap: Number) -> Decimal:
    market_cap = D(market_cap)
    if market_cap <= 0:
        raise ParameterError(f"market cap must be positive, got {market_cap}")
    return D(reward_fiat) / market_cap


def backsolve_market_cap(reward_fiat: Number, inflation: Number) -> Decimal:
    """Market cap implied by a yearly reward and an inflation rate."""
    inflation = D(inflation)
    if inflation <= 0:
        raise ParameterError(f"inflation must be positive, got {inflation}")
    return D(reward_fiat) / inflation


@dataclass(frozen=True)
class PublishedRow:
    """One row of the published mining-reward table."""
    coin: CoinRow
    block_time_seconds: Decimal
    printed_reward: Decimal
    printed_inflation: Decimal


TABLE3_ROWS: List[PublishedRow] = [
    PublishedRow(CoinRow("BTC", D("6.25"), D(144), D(50000)), D(600), D("18.061e9"), D("0.0412")),
    PublishedRow(CoinRow("ETH", D(2), D(6545), D(3780)), D("13.2"), D("16.425e9"), D("0.0176")),
    PublishedRow(CoinRow("DOGE", D(10000), D(1440), D("0.49")), D(60), D("2.575e9"), D("0.0406")),
    PublishedRow(CoinRow("LTC", D("12.5"), D(576), D(320)), D(150), D("840e6"), D("0.0394")),
    PublishedRow(CoinRow("BCH", D("6.25"), D(144), D(1275)), D(600), D("418e6"), D("0.0175")),
    PublishedRow(CoinRow("ZEC", D("3.125"), D(1152), D(301)), D(75), D("395e6"), D("0.1184")),
    PublishedRow(CoinRow("XMR", D("1.02"), D(720), D(407)), D(120), D("109e6"), D("0.015")),
]


@dataclass(frozen=True)
class Table3Result:
    name: str
    derived_reward: Decimal
    printed_reward: Decimal
    deviation: Decimal
    market_cap: Decimal
    derived_inflation: Decimal
    printed_inflation: Decimal
    inflation_deviation: Decimal
    flagged: bool
    note: str = ""

    def to_json(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "derived_reward": money(self.derived_reward),
            "printed_reward": money(self.printed_reward),
            "deviation": str(self.deviation),
            "market_cap": money(self.market_cap),
            "derived_inflation": str(self.derived_inflation),
            "printed_inflation": str(self.printed_inflation),
            "inflation_deviation": str(self.inflation_deviation),
            "flagged": self.flagged,
            "note": self.note,
        }


def _relative(derived: Decimal, printed: Decimal) -> Decimal:
    return (derived - printed) / printed


def table3(rows: Sequence[PublishedRow] = TABLE3_ROWS,
           tolerance: Decimal = TABLE_TOLERANCE) -> List[Table3Result]:
    """
    Recompute every row from the reward formula.

    Market caps are back-solved from the printed reward and inflation, so
    the derived inflation column round-trips exactly when the printed
    reward matches the formula. Rows outside ``tolerance`` are flagged;
    a flagged row whose derived reward matches another row's printed value
    is reported as a transposition.
    """
    derived = {row.coin.name: yearly_reward(row.coin) for row in rows}
    results = []
    for row in rows:
        name = row.coin.name
        reward = derived[name]
        deviation = _relative(reward, row.printed_reward)
        cap = row.coin.market_cap or backsolve_market_cap(row.printed_reward, row.printed_inflation)
        inflation = yearly_inflation(reward, cap)
        flagged = abs(deviation) > tolerance
        note = ""
        if flagged:
            matches = [other.coin.name for other in rows if other.coin.name != name
                       and abs(_relative(reward, other.printed_reward)) <= tolerance]
            note = f"derived value matches the printed {matches[0]} row; rows transposed" if matches \
                else "printed value does not match the formula"
            logger.info(f"{name}: derived {reward:.4E} vs printed {row.printed_reward:.4E} ({note})")
        results.append(Table3Result(
            name=name,
            derived_reward=reward,
            printed_reward=row.printed_reward,
            deviation=deviation,
            market_cap=cap,
            derived_inflation=inflation,
            printed_inflation=row.printed_inflation,
            inflation_deviation=_relative(inflation, row.printed_inflation),
            flagged=flagged,
            note=note,
        ))
    return results


def format_fiat(value: Decimal) -> str:
    """$2.575 B / $840 MM style, as the published table prints amounts."""
    if abs(value) >= Decimal("1e9"):
        return f"${value / Decimal('1e9'):.3f} B"
    if abs(value) >= Decimal("1e6"):
        return f"${value / Decimal('1e6'):.0f} MM"
    return f"${value:,.2f}"
