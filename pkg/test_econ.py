#!/usr/bin/env python3
"""
Tests for the economic-safety formulas and the mining-reward table.
"""

from decimal import Decimal

import pytest

from beacon_bft.econ import (
    D,
    CoinRow,
    PermissionedParams,
    PermissionlessParams,
    beta_permissioned,
    beta_permissionless,
    blocks_per_day,
    format_fiat,
    min_block_reward,
    money,
    permissioned_safer,
    poca_ratio,
    required_penalty_sum,
    table3,
    yearly_inflation,
    yearly_reward,
)
from beacon_bft.errors import ParameterError


@pytest.fixture
def chain():
    return PermissionlessParams(R=D("6.25"), x=D(50000), w=D(100))


def test_beta_permissionless(chain):
    assert beta_permissionless(chain) == Decimal("31250000")
    half = PermissionlessParams(R=chain.R, x=chain.x, w=chain.w, f_detect=D("0.5"))
    assert beta_permissionless(half) == Decimal("15625000")


def test_beta_permissioned_uses_cheapest_coalition():
    p = PermissionedParams(penalties=[5, 1, 3], tau=D("0.5"), N=2)
    assert p.lowest_penalty_sum() == 4
    assert beta_permissioned(p) == 2


def test_beta_grows_with_every_input(chain):
    base = beta_permissionless(chain)
    for name in ("R", "x", "w"):
        bigger = PermissionlessParams(**{**chain.__dict__, name: getattr(chain, name) * 2})
        assert beta_permissionless(bigger) > base

    p = PermissionedParams(penalties=[1, 2, 3, 4], tau=D("0.5"), N=2)
    assert beta_permissioned(PermissionedParams(p.penalties, D("0.9"), 2)) > beta_permissioned(p)
    assert beta_permissioned(PermissionedParams(p.penalties, p.tau, 3)) > beta_permissioned(p)


def test_permissioned_safer_is_strict(chain):
    target = chain.w * chain.R * chain.x
    equal = PermissionedParams(penalties=[target], tau=1, N=1)
    above = PermissionedParams(penalties=[target + 1], tau=1, N=1)
    assert not permissioned_safer(equal, chain)
    assert permissioned_safer(above, chain)


def test_required_penalty_sum(chain):
    assert required_penalty_sum(chain, D("0.5")) == Decimal("62500000")
    with pytest.raises(ParameterError):
        required_penalty_sum(chain, 0)


def test_min_block_reward():
    assert min_block_reward(1000, D("0.1")) == Decimal(10000)
    with pytest.raises(ParameterError):
        min_block_reward(1000, 0)


def test_poca_ratio():
    assert poca_ratio(500, 5) == 100
    with pytest.raises(ParameterError):
        poca_ratio(500, 0)


def test_bad_parameters_are_refused():
    with pytest.raises(ParameterError):
        PermissionlessParams(R=D(-1), x=D(1), w=D(1))
    with pytest.raises(ParameterError):
        PermissionlessParams(R=D(1), x=D(1), w=D(1), f_detect=D("1.5"))
    with pytest.raises(ParameterError):
        PermissionedParams(penalties=[1], tau=D(2), N=1)
    with pytest.raises(ParameterError):
        beta_permissioned(PermissionedParams(penalties=[1], tau=D(1), N=2))


def test_blocks_per_day():
    assert blocks_per_day(600) == 144
    assert blocks_per_day(60) == 1440
    assert blocks_per_day(D("13.2")) == 6545
    with pytest.raises(ParameterError):
        blocks_per_day(0)


def test_yearly_reward():
    assert yearly_reward(CoinRow("DOGE", D(10000), D(1440), D("0.49"))) == Decimal("2575440000")


def test_yearly_inflation():
    assert yearly_inflation(D("2575440000"), D("6.342e10")).quantize(Decimal("0.0001")) == Decimal("0.0406")
    assert yearly_inflation(0, 100) == 0
    with pytest.raises(ParameterError):
        yearly_inflation(1, 0)


def test_table_rows_match_formula_except_transposed_pair():
    results = {r.name: r for r in table3()}
    assert len(results) == 7
    for name in ("DOGE", "LTC", "BCH", "ZEC", "XMR"):
        assert not results[name].flagged
        assert abs(results[name].deviation) <= Decimal("0.005")
    assert results["BTC"].flagged and results["ETH"].flagged
    assert "ETH" in results["BTC"].note
    assert "BTC" in results["ETH"].note
    assert results["BTC"].derived_reward == Decimal("16425000000")


def test_table_json_carries_currency():
    row = table3()[2].to_json()
    assert row["name"] == "DOGE"
    assert row["derived_reward"]["currency"] == "USD"
    assert money(1)["value"] == "1"


def test_format_fiat():
    assert format_fiat(Decimal("2575440000")) == "$2.575 B"
    assert format_fiat(Decimal("840960000")) == "$841 MM"
    assert format_fiat(Decimal("1234.5")) == "$1,234.50"
