#!/usr/bin/env python3
"""
Tests for the beacon-bft command line: exit codes and output files.
"""

import csv
import json
from decimal import Decimal

import pytest

from beacon_bft.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, EXIT_SAFETY, main


def test_sim_run_writes_results(tmp_path, fixtures_dir, capsys):
    code = main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_n4.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("metrics.json", "metrics.csv", "trace.jsonl"):
        assert (tmp_path / name).exists()
    metrics = json.loads((tmp_path / "metrics.json").read_text())["metrics"]
    assert metrics["commits"] >= 10
    assert "✅" in capsys.readouterr().out


def test_sim_run_flags_override_file(tmp_path, fixtures_dir):
    code = main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_n4.json"),
                 "--out", str(tmp_path), "--seed", "5", "--rounds", "3"])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["metadata"]["seed"] == 5
    assert data["metadata"]["scenario_config"]["rounds"] == 3


def test_sim_run_invalid_scenario(tmp_path, fixtures_dir, capsys):
    code = main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_invalid.json"), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "3f+1" in capsys.readouterr().err


def test_sim_run_missing_file(tmp_path):
    assert main(["sim", "run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_sim_run_unsafe_roster_allowed(tmp_path, fixtures_dir):
    code = main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_unsafe.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK


def test_sim_run_injected_fork_exits_three(tmp_path, fixtures_dir):
    code = main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_fork.json"), "--out", str(tmp_path)])
    assert code == EXIT_SAFETY


def test_sim_sweep_rows_follow_the_matrix(tmp_path, fixtures_dir):
    code = main(["sim", "sweep", "--matrix", str(fixtures_dir / "matrix_small.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    with open(tmp_path / "sweep.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["name"] for r in rows] == ["n4-crash", "n7-equivocate", "n4-crash"]
    assert rows[0] == rows[2]


def test_sim_sweep_empty_matrix(tmp_path, fixtures_dir):
    code = main(["sim", "sweep", "--matrix", str(fixtures_dir / "matrix_empty.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("name,n,f")


def test_sim_report_renders_figures(tmp_path, fixtures_dir):
    run_dir, report_dir = tmp_path / "run", tmp_path / "report"
    assert main(["sim", "run", "--scenario", str(fixtures_dir / "scenario_n4.json"),
                 "--out", str(run_dir), "--rounds", "4"]) == EXIT_OK
    code = main(["sim", "report", "--trace", str(run_dir / "trace.jsonl"), "--out", str(report_dir),
                 "--fairness"])
    assert code == EXIT_OK
    for name in ("dashboard.png", "latency_cdf.png", "leaders.png", "streaks.png", "timeline.html"):
        assert (report_dir / name).exists()


def test_sim_fairness_underpowered_is_not_a_failure(fixtures_dir, capsys):
    code = main(["sim", "fairness", "--scenario", str(fixtures_dir / "fairness_n9.json"),
                 "--views", "50", "--min-views", "1000"])
    assert code == EXIT_OK
    out = capsys.readouterr()
    assert json.loads(out.out)["passed"] is None
    assert "50 views" in out.err


def test_beacon_demo_mock(capsys):
    assert main(["beacon", "demo", "--mock", "--rounds", "4", "--seed", "3"]) == EXIT_OK
    out = capsys.readouterr()
    records = json.loads(out.out)
    assert [r["round"] for r in records] == [0, 1, 2, 3]
    assert "4/4 outputs verified" in out.err


@pytest.mark.slow
def test_beacon_demo_threshold(tmp_path, capsys):
    target = tmp_path / "transcript.json"
    assert main(["beacon", "demo", "--n", "5", "--t", "3", "--rounds", "3", "--out", str(target)]) == EXIT_OK
    assert len(json.loads(target.read_text())) == 3
    assert "3/3 outputs verified" in capsys.readouterr().err


def test_roster_issue_and_admit(tmp_path, fixtures_dir, capsys):
    node_key = "ab" * 32
    assert main(["roster", "issue", "--issuer", "office", "--issuer-seed", "2",
                 "--identity", "alice", "--node-key", node_key]) == EXIT_OK
    issued = json.loads(capsys.readouterr().out)
    (tmp_path / "cred.json").write_text(json.dumps(issued["credential"]))
    (tmp_path / "issuers.json").write_text(json.dumps(issued["issuer"]))

    args = ["roster", "admit", "--scenario", str(fixtures_dir / "scenario_n4.json"),
            "--cred", str(tmp_path / "cred.json"), "--issuers", str(tmp_path / "issuers.json"),
            "--out", str(tmp_path / "roster.json")]
    assert main(args) == EXIT_OK
    roster = json.loads((tmp_path / "roster.json").read_text())
    assert len(roster["members"]) == 5
    capsys.readouterr()

    # the same identity again is a Sybil attempt
    args[args.index("--scenario"):args.index("--scenario") + 2] = ["--roster", str(tmp_path / "roster.json")]
    assert main(args) == EXIT_CHECK_FAILED
    assert "sybil" in capsys.readouterr().err


def test_roster_issue_rejects_bad_hex():
    assert main(["roster", "issue", "--issuer", "o", "--identity", "a", "--node-key", "xyz"]) == EXIT_CONFIG


def test_roster_show(fixtures_dir, capsys):
    assert main(["roster", "show", "--scenario", str(fixtures_dir / "scenario_n4.json")]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["members"]) == 4


def test_econ_commands(capsys):
    assert main(["econ", "beta-pl", "--R", "6.25", "--x", "50000", "--w", "100"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["beta"] == {"value": "31250000.00", "currency": "USD"}

    assert main(["econ", "compare", "--R", "1", "--x", "1", "--w", "10",
                 "--penalties", "4", "5", "6", "--tau", "1", "--N", "2"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["permissioned_safer"] is False

    assert main(["econ", "min-reward", "--v-attack", "1000", "--alpha", "0.1"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["min_block_reward"]["currency"] == "USD"


def test_econ_params_file(tmp_path, capsys):
    params = tmp_path / "params.json"
    params.write_text(json.dumps({"penalties": ["5", "1", "3"], "tau": "0.5", "N": 2}))
    assert main(["econ", "beta-p", "--params", str(params)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["beta"]["value"] == "2.0"


def test_econ_table3(capsys):
    assert main(["econ", "table3", "--json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert sum(1 for r in rows if r["flagged"]) == 2
    assert main(["econ", "table3"]) == EXIT_OK
    assert "DOGE" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["sim"],
    ["sim", "run"],
    ["econ", "beta-pl", "--R", "lots"],
    ["econ", "beta-pl", "--R", "1"],
    ["econ", "poca", "--worst", "1", "--zkpoi", "0"],
    ["econ", "beta-p", "--penalties", "1", "--tau", "2", "--N", "1"],
])
def test_bad_usage_exits_two(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_econ_compare_with_no_punishment(capsys):
    code = main(["econ", "compare", "--R", "6.25", "--x", "50000", "--w", "100",
                 "--penalties", "1e9", "1e9", "--tau", "0", "--N", "2"])
    assert code == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["permissioned_safer"] is False
    assert result["required_penalty_sum"] is None
    assert Decimal(result["beta_permissioned"]["value"]) == 0


def test_roster_file_with_bad_hex(tmp_path, capsys):
    bad = tmp_path / "roster.json"
    bad.write_text(json.dumps({"epoch": 0, "members": [{"id": 0, "pubkey_hex": "zz"}]}))
    assert main(["roster", "show", "--roster", str(bad)]) == EXIT_CONFIG
    assert "malformed roster" in capsys.readouterr().err

    bad.write_text(json.dumps({"members": [{"pubkey_hex": "ab"}]}))
    assert main(["roster", "show", "--roster", str(bad)]) == EXIT_CONFIG


def test_sim_bench_one_height(capsys):
    assert main(["sim", "bench", "--nodes", "4", "--rounds", "1"]) == EXIT_OK
    out = capsys.readouterr()
    assert json.loads(out.out)["node_counts"] == [4]
    assert "Benchmarking n=4" in out.err


def test_info(capsys):
    assert main(["info"]) == EXIT_OK
    assert "Package Dependencies" in capsys.readouterr().out
