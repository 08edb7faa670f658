"""
Command-line entry point: ``beacon-bft``.

Exit codes are stable: 0 success, 1 a statistical or admission check
failed, 2 usage or configuration error, 3 safety violation, 4 liveness
stall.
"""

import argparse
import contextlib
import json
import logging
import sys
from decimal import InvalidOperation
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .errors import AdmissionError, BeaconBftError, ConfigurationError, ParameterError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SAFETY = 3
EXIT_LIVENESS = 4


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError([f"cannot read {path}: {exc}"]) from exc


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError([f"output directory {path} is not writable: {exc}"]) from exc
    return out


def _verdict(safety_violations: int, liveness_stalls: int) -> int:
    if safety_violations:
        return EXIT_SAFETY
    if liveness_stalls:
        return EXIT_LIVENESS
    return EXIT_OK


# -- sim -----------------------------------------------------------------------------

def cmd_sim_run(args: argparse.Namespace) -> int:
    from .config import load_scenario
    from .simulation import Simulation
    from .utils import export_data

    scenario = load_scenario(args.scenario, seed=args.seed, rounds=args.rounds)
    out = _out_dir(args.out)
    results = Simulation(scenario).run()

    for filename, fmt in (("metrics.json", "json"), ("metrics.csv", "csv"), ("trace.jsonl", "jsonl")):
        if not export_data(results, str(out / filename), fmt):
            raise ConfigurationError([f"cannot write {out / filename}"])

    m = results.metrics
    print(f"{'✅' if m.passed else '❌'} {scenario.name or 'scenario'}: "
          f"{m.commits} heights committed, {m.views} views, p50 latency {m.latency_p50:.2f}, "
          f"{m.safety_violations} safety violation(s), {m.liveness_stalls} stall(s)")
    print(f"   results in {out}")
    return _verdict(m.safety_violations, m.liveness_stalls)


def cmd_sim_sweep(args: argparse.Namespace) -> int:
    from .config import load_matrix
    from .utils import SWEEP_COLUMNS, run_sweep, write_rows

    scenarios = load_matrix(args.matrix)
    out = _out_dir(args.out)
    rows = run_sweep(scenarios, parallel=args.parallel)
    path = write_rows(rows, str(out / "sweep.csv"), SWEEP_COLUMNS)

    errors = sum(1 for r in rows if r.get("error"))
    safety = sum(int(r.get("safety_violations") or 0) for r in rows)
    stalls = sum(int(r.get("liveness_stalls") or 0) for r in rows)
    print(f"📊 {len(rows)} scenario(s) -> {path}: {errors} error(s), "
          f"{safety} safety violation(s), {stalls} stall(s)")
    code = _verdict(safety, stalls)
    if code == EXIT_OK and errors:
        return EXIT_CONFIG
    return code


def cmd_sim_report(args: argparse.Namespace) -> int:
    from .analysis import compute_metrics, fairness_report
    from .simulation import SimulationResults
    from .utils import read_trace
    from .visualization import save_report

    try:
        trace = read_trace(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigurationError([f"cannot read trace {args.trace}: {exc}"]) from exc
    metrics = compute_metrics(trace)
    header = trace[0] if trace else {}
    results = SimulationResults(metrics=metrics, trace=trace,
                                metadata={"scenario_config": header.get("scenario", {})})
    fairness = fairness_report(trace, min_views=args.min_views) if args.fairness else None
    written = save_report(results, args.out, fairness)
    for name, path in written.items():
        print(f"🖼  {name}: {path}")
    return _verdict(metrics.safety_violations, metrics.liveness_stalls)


def cmd_sim_fairness(args: argparse.Namespace) -> int:
    from .analysis import election_trace, fairness_report
    from .config import load_scenario

    scenario = load_scenario(args.scenario, seed=args.seed)
    report = fairness_report(election_trace(scenario, args.views), min_views=args.min_views)
    _print_json(report.to_json())
    if report.passed is None:
        print(f"⚠️  only {report.views} views; at least {args.min_views} needed for a verdict", file=sys.stderr)
        return EXIT_OK
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_sim_bench(args: argparse.Namespace) -> int:
    from .utils import benchmark_performance

    # stdout carries only the JSON result
    with contextlib.redirect_stdout(sys.stderr):
        results = benchmark_performance(args.nodes, rounds=args.rounds, seed=args.seed or 0)
    _print_json(results)
    return EXIT_OK


# -- beacon / roster -----------------------------------------------------------------

def cmd_beacon_demo(args: argparse.Namespace) -> int:
    from .beacon import MockBeacon, ThresholdBeacon, transcript

    seed = args.seed or 0
    service = MockBeacon(seed) if args.mock else ThresholdBeacon.create(args.n, args.t, seed)
    records = transcript(service, args.rounds)
    verified = sum(1 for r in range(args.rounds) if service.verify(service.output(r)))
    _print_json(records)
    if args.out:
        Path(args.out).write_text(json.dumps(records, indent=2))
    print(f"{'✅' if verified == args.rounds else '❌'} {verified}/{args.rounds} outputs verified",
          file=sys.stderr)
    return EXIT_OK if verified == args.rounds else EXIT_CHECK_FAILED


def _load_roster(args: argparse.Namespace):
    from .config import load_scenario
    from .membership import Roster
    from .simulation import node_keypairs

    if args.roster:
        data = _read_json(args.roster)
        try:
            return Roster.from_json(data)
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ConfigurationError([f"malformed roster file {args.roster}: {exc}"]) from exc
    scenario = load_scenario(args.scenario, seed=args.seed)
    return Roster.from_public_keys([kp.public_key for kp in node_keypairs(scenario)])


def cmd_roster_show(args: argparse.Namespace) -> int:
    _print_json(_load_roster(args).to_json())
    return EXIT_OK


def cmd_roster_issue(args: argparse.Namespace) -> int:
    from .membership import Issuer, issue_credential

    try:
        node_key = bytes.fromhex(args.node_key)
    except ValueError as exc:
        raise ConfigurationError([f"--node-key is not hex: {exc}"]) from exc
    issuer = Issuer.generate(args.issuer, args.issuer_seed)
    cred = issue_credential(issuer, args.identity.encode(), node_key)
    _print_json({"issuer": {issuer.issuer_id: issuer.verification_key.hex()},
                 "credential": cred.to_json()})
    return EXIT_OK


def cmd_roster_admit(args: argparse.Namespace) -> int:
    from .membership import Credential, admit

    roster = _load_roster(args)
    try:
        cred = Credential.from_json(_read_json(args.cred))
        issuers = {k: bytes.fromhex(v) for k, v in _read_json(args.issuers).items()}
    except (KeyError, ValueError, AttributeError) as exc:
        raise ConfigurationError([f"malformed credential or issuer file: {exc}"]) from exc
    try:
        roster = admit(roster, cred, issuers)
    except AdmissionError as exc:
        print(f"❌ admission rejected: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    data = roster.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=2))
    _print_json(data)
    return EXIT_OK


# -- econ ----------------------------------------------------------------------------

def _econ_params(args: argparse.Namespace, names: Sequence[str]) -> Dict[str, Any]:
    """Parameters from --params JSON, overridden by any flag given."""
    params: Dict[str, Any] = dict(_read_json(args.params)) if args.params else {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    missing = [n for n in names if n not in params and n != "f_detect"]
    if missing:
        raise ConfigurationError([f"missing econ parameter '{n}'" for n in missing])
    return {n: params[n] for n in names if n in params}


def _permissionless(args):
    from .econ import PermissionlessParams
    return PermissionlessParams(**_econ_params(args, ("R", "x", "w", "f_detect")))


def _permissioned(args):
    from .econ import PermissionedParams
    params = _econ_params(args, ("penalties", "tau", "N", "f_detect"))
    params["N"] = int(params["N"])
    return PermissionedParams(**params)


def cmd_econ(args: argparse.Namespace) -> int:
    from . import econ

    action = args.econ_command
    if action == "beta-pl":
        result: Dict[str, Any] = {"beta": econ.money(econ.beta_permissionless(_permissionless(args)))}
    elif action == "beta-p":
        result = {"beta": econ.money(econ.beta_permissioned(_permissioned(args)))}
    elif action == "compare":
        p, q = _permissioned(args), _permissionless(args)
        # tau = 0 means penalties are never collected: no finite sum suffices
        required = econ.money(econ.required_penalty_sum(q, p.tau)) if p.tau > 0 else None
        result = {
            "beta_permissioned": econ.money(econ.beta_permissioned(p)),
            "beta_permissionless": econ.money(econ.beta_permissionless(q)),
            "permissioned_safer": econ.permissioned_safer(p, q),
            "required_penalty_sum": required,
        }
    elif action == "min-reward":
        params = _econ_params(args, ("v_attack", "alpha"))
        result = {"min_block_reward": econ.money(econ.min_block_reward(params["v_attack"], params["alpha"]))}
    elif action == "poca":
        params = _econ_params(args, ("worst_nash_cost", "zkpoi_cost"))
        result = {"poca": str(econ.poca_ratio(params["worst_nash_cost"], params["zkpoi_cost"]))}
    else:
        return _econ_table3(args)
    _print_json(result)
    return EXIT_OK


def _econ_table3(args: argparse.Namespace) -> int:
    from .econ import format_fiat, table3

    rows = table3()
    if args.json:
        _print_json([r.to_json() for r in rows])
        return EXIT_OK
    print(f"{'Coin':<6}{'Derived':>14}{'Printed':>14}{'Deviation':>11}{'Inflation':>11}  Note")
    print("-" * 80)
    for r in rows:
        print(f"{r.name:<6}{format_fiat(r.derived_reward):>14}{format_fiat(r.printed_reward):>14}"
              f"{float(r.deviation):>+10.2%} {float(r.derived_inflation):>10.2%}  "
              f"{'⚠️  ' + r.note if r.flagged else ''}")
    return EXIT_OK


def cmd_info(args: argparse.Namespace) -> int:
    from .utils import print_system_info
    print_system_info()
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _decimal_arg(text: str) -> str:
    from decimal import Decimal
    try:
        Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beacon-bft",
        description="Beacon-driven rotating-leader BFT: simulator, checkers, beacon, membership and "
                    "economic-safety tools. Scenario fields can also be set through BEACON_BFT_<FIELD> "
                    "environment variables (e.g. BEACON_BFT_SEED=7); flags take precedence.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    # sim
    sim = sub.add_parser("sim", help="run, sweep and report on simulated executions")
    sim_sub = sim.add_subparsers(dest="sim_command", metavar="ACTION")
    sim_sub.required = True

    p = sim_sub.add_parser("run", help="execute one scenario and check its trace")
    p.add_argument("--scenario", help="scenario JSON (defaults and environment otherwise)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--rounds", type=int, help="override the number of heights to commit")
    p.set_defaults(func=cmd_sim_run)

    p = sim_sub.add_parser("sweep", help="execute every scenario of a matrix into sweep.csv")
    p.add_argument("--matrix", "--scenario", dest="matrix", required=True, help="matrix JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")
    p.set_defaults(func=cmd_sim_sweep)

    p = sim_sub.add_parser("report", help="render figures from a trace")
    p.add_argument("--trace", required=True, help="trace.jsonl(.gz) from 'sim run'")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fairness", action="store_true", help="add leader-fairness figures")
    p.add_argument("--min-views", type=int, default=100, help="views needed for a fairness verdict")
    p.set_defaults(func=cmd_sim_report)

    p = sim_sub.add_parser("fairness", help="leader-election fairness over a long view schedule")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--views", type=int, default=10_000, help="views to elect (default 10000)")
    p.add_argument("--min-views", type=int, default=1000, help="views needed for a verdict")
    p.set_defaults(func=cmd_sim_fairness)

    p = sim_sub.add_parser("bench", help="simulator throughput across roster sizes")
    p.add_argument("--nodes", type=int, nargs="+", default=[4, 16, 31, 64])
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sim_bench)

    # beacon
    beacon = sub.add_parser("beacon", help="threshold beacon tools")
    beacon_sub = beacon.add_subparsers(dest="beacon_command", metavar="ACTION")
    beacon_sub.required = True
    p = beacon_sub.add_parser("demo", help="run a DKG and print a verified transcript")
    p.add_argument("--n", type=int, default=5, help="group size")
    p.add_argument("--t", type=int, help="threshold (default floor(n/2)+1)")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--mock", action="store_true", help="hash-chain beacon instead of threshold BLS")
    p.add_argument("--out", help="also write the transcript to this file")
    p.set_defaults(func=cmd_beacon_demo)

    # roster
    roster = sub.add_parser("roster", help="membership tools")
    roster_sub = roster.add_subparsers(dest="roster_command", metavar="ACTION")
    roster_sub.required = True
    for name, func, helptext in (("show", cmd_roster_show, "print a roster snapshot"),
                                 ("admit", cmd_roster_admit, "admit a credential holder")):
        p = roster_sub.add_parser(name, help=helptext)
        p.add_argument("--roster", help="roster snapshot JSON (default: the scenario's roster)")
        p.add_argument("--scenario", help="scenario JSON used when --roster is absent")
        p.add_argument("--seed", type=int)
        if name == "admit":
            p.add_argument("--cred", required=True, help="credential JSON")
            p.add_argument("--issuers", required=True, help="JSON object issuer id -> verification key hex")
            p.add_argument("--out", help="write the new roster here")
        p.set_defaults(func=func)
    p = roster_sub.add_parser("issue", help="issue a credential from a deterministic issuer")
    p.add_argument("--issuer", required=True, help="issuer id")
    p.add_argument("--issuer-seed", type=int, default=0)
    p.add_argument("--identity", required=True, help="identity commitment (text)")
    p.add_argument("--node-key", required=True, help="node public key hex")
    p.set_defaults(func=cmd_roster_issue)

    # econ
    econ = sub.add_parser("econ", help="economic-safety calculator")
    econ_sub = econ.add_subparsers(dest="econ_command", metavar="ACTION")
    econ_sub.required = True

    def econ_parser(name: str, helptext: str) -> argparse.ArgumentParser:
        ep = econ_sub.add_parser(name, help=helptext)
        ep.add_argument("--params", help="parameter JSON; flags override its keys")
        ep.set_defaults(func=cmd_econ)
        return ep

    def permissionless_flags(ep):
        ep.add_argument("--R", type=_decimal_arg, help="block reward (coins)")
        ep.add_argument("--x", type=_decimal_arg, help="exchange rate (USD per coin)")
        ep.add_argument("--w", type=_decimal_arg, help="blocks until maturation")

    def permissioned_flags(ep):
        ep.add_argument("--penalties", type=_decimal_arg, nargs="+", help="per-node penalties (USD)")
        ep.add_argument("--tau", type=_decimal_arg, help="probability of punishment")
        ep.add_argument("--N", type=int, help="colluding nodes")

    p = econ_parser("beta-pl", "unsafe transaction value, permissionless chain")
    permissionless_flags(p)
    p.add_argument("--f-detect", dest="f_detect", type=_decimal_arg)
    p = econ_parser("beta-p", "unsafe transaction value, permissioned chain")
    permissioned_flags(p)
    p.add_argument("--f-detect", dest="f_detect", type=_decimal_arg)
    p = econ_parser("compare", "is the permissioned chain safer?")
    permissionless_flags(p)
    permissioned_flags(p)
    p = econ_parser("min-reward", "block-reward infimum v_attack / alpha")
    p.add_argument("--v-attack", dest="v_attack", type=_decimal_arg)
    p.add_argument("--alpha", type=_decimal_arg)
    p = econ_parser("poca", "price of crypto-anarchy")
    p.add_argument("--worst", dest="worst_nash_cost", type=_decimal_arg)
    p.add_argument("--zkpoi", dest="zkpoi_cost", type=_decimal_arg)
    p = econ_parser("table3", "recompute the mining-reward table")
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("info", help="system and dependency report")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    from .utils import configure_logging
    configure_logging(args.verbose)

    try:
        return args.func(args)
    except ConfigurationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParameterError, BeaconBftError, InvalidOperation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
