#!/usr/bin/env python3
"""
Tests for export, sweep and logging helpers.
"""

import logging

import pytest

from beacon_bft.config import Scenario
from beacon_bft.simulation import Simulation
from beacon_bft.utils import (
    SWEEP_COLUMNS,
    benchmark_performance,
    configure_logging,
    create_parameter_sweep_config,
    export_data,
    load_data,
    print_system_info,
    run_sweep,
    write_rows,
)


@pytest.fixture(scope="module")
def results():
    return Simulation(Scenario(n=4, f=1, rounds=3, seed=2, name="export")).run()


def test_json_export(tmp_path, results):
    path = tmp_path / "metrics.json"
    assert export_data(results, str(path), "json")
    data = load_data(str(path))
    assert data["metrics"]["commits"] == results.metrics.commits
    assert data["metadata"]["scenario"] == "export"
    assert data["trace_digest"] == results.trace_digest()


def test_trace_export_plain_and_gzipped(tmp_path, results):
    for name, fmt in (("trace.jsonl", "jsonl"), ("trace.jsonl.gz", "jsonl.gz")):
        path = tmp_path / name
        assert export_data(results, str(path), fmt)
        events = load_data(str(path))
        assert events[0]["event"] == "roster"
        assert len(events) == len(results.trace)


def test_csv_export_has_one_row(tmp_path, results):
    path = tmp_path / "metrics.csv"
    assert export_data(results, str(path), "csv")
    rows = load_data(str(path))
    assert len(rows) == 1
    assert rows[0]["name"] == "export"
    assert int(rows[0]["commits"]) == results.metrics.commits


def test_unknown_format_fails_quietly(tmp_path, results):
    assert not export_data(results, str(tmp_path / "x.bin"), "parquet")
    assert load_data(str(tmp_path / "missing.json")) is None


def test_empty_rows_still_write_header(tmp_path):
    path = write_rows([], str(tmp_path / "empty.csv"), SWEEP_COLUMNS)
    assert path.read_text().strip() == ",".join(SWEEP_COLUMNS)


def test_parameter_sweep_config_keeps_rosters_valid():
    configs = create_parameter_sweep_config("n", 4, 10, 3)
    assert [(c["n"], c["f"]) for c in configs] == [(4, 1), (7, 2), (10, 3)]
    assert configs[1]["name"] == "n=7"
    deltas = create_parameter_sweep_config("delta", 0.5, 1.5, 3)
    assert [c["delta"] for c in deltas] == [0.5, 1.0, 1.5]
    assert all(Scenario.from_json(c).validate()[0] for c in configs + deltas)


def test_sweep_reports_errors_per_row():
    scenarios = [Scenario(n=4, f=1, rounds=2, seed=1, name="ok"), Scenario(n=5, f=1, rounds=2, name="bad")]
    rows = run_sweep(scenarios)
    assert [r["name"] for r in rows] == ["ok", "bad"]
    assert rows[0]["error"] == ""
    assert "3f+1" in rows[1]["error"]


def test_configure_logging_levels():
    configure_logging(0)
    assert logging.getLogger("beacon_bft").level == logging.WARNING
    configure_logging(2)
    assert logging.getLogger("beacon_bft").level == logging.DEBUG
    assert len(logging.getLogger("beacon_bft").handlers) == 1
    configure_logging(0)


def test_benchmark_single_height(capsys):
    bench = benchmark_performance([4, 7], rounds=1, seed=3)
    assert bench["node_counts"] == [4, 7]
    assert bench["rounds"] == 1
    assert len(bench["execution_times"]) == 2
    assert all(m > 0 for m in bench["messages_sent"])
    assert bench["fastest_n"] in (4, 7)
    assert "Benchmarking n=7" in capsys.readouterr().out


def test_system_info_lists_dependencies(capsys):
    print_system_info()
    out = capsys.readouterr().out
    for name in ("numpy", "py_ecc", "cryptography"):
        assert name in out
