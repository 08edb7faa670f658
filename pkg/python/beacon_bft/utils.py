"""
Utility functions for the beacon-bft package
"""

import csv
import gzip
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .config import Scenario
from .errors import BeaconBftError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
SCENARIO_COLUMNS = ["name", "n", "f", "gst", "delta", "rounds", "seed", "adversary_policy",
                    "corruption", "beacon_backend"]
METRIC_COLUMNS = ["commits", "max_height", "latency_mean", "latency_p50", "latency_p95", "latency_max",
                  "views", "timeouts", "equivocations", "safety_violations", "liveness_stalls",
                  "delay_violations", "messages_sent", "end_time", "stop_reason",
                  "leader_histogram", "streak_histogram"]
SWEEP_COLUMNS = SCENARIO_COLUMNS + METRIC_COLUMNS + ["error"]


def configure_logging(verbosity: int = 0) -> None:
    """Single stream handler; 0 -> WARNING, 1 -> INFO, 2+ -> DEBUG."""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    root = logging.getLogger("beacon_bft")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="" if path.suffix == ".csv" else None)


def trace_lines(trace: Iterable[Dict[str, Any]]) -> Iterator[str]:
    """Canonical JSON-lines rendering: sorted keys, compact separators."""
    for event in trace:
        yield json.dumps(event, sort_keys=True, separators=(",", ":"))


def write_trace(trace: Iterable[Dict[str, Any]], filename: str) -> Path:
    """Write a trace as JSON lines; a ``.gz`` suffix compresses it."""
    path = Path(filename)
    with _open(path, "w") as f:
        for line in trace_lines(trace):
            f.write(line + "\n")
    return path


def read_trace(filename: str) -> List[Dict[str, Any]]:
    path = Path(filename)
    with _open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_rows(rows: Sequence[Dict[str, Any]], filename: str,
               columns: Optional[Sequence[str]] = None) -> Path:
    """CSV with a fixed header; an empty ``rows`` still writes the header."""
    path = Path(filename)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with _open(path, "w") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def export_data(results, filename: str, format: str = "json") -> bool:
    """
    Export simulation results to file.

    Args:
        results: SimulationResults object
        filename: Output filename
        format: Export format ("json" for metrics and metadata, "csv" for one
            metrics row, "jsonl" for the trace; "jsonl.gz" compresses it)

    Returns:
        Success status
    """
    try:
        filepath = Path(filename)
        fmt = format.lower()

        if fmt == "json":
            export_dict = {
                'metrics': results.metrics.to_json(),
                'metadata': results.metadata,
                'trace_digest': results.trace_digest(),
            }
            with open(filepath, 'w') as f:
                json.dump(export_dict, f, indent=2, sort_keys=True)

        elif fmt == "csv":
            row = scenario_row(results.metadata.get('scenario_config', {}))
            row.update(results.metrics.to_row())
            write_rows([row], str(filepath), SCENARIO_COLUMNS + METRIC_COLUMNS)

        elif fmt in ("jsonl", "jsonl.gz"):
            write_trace(results.trace, str(filepath))

        else:
            raise ValueError(f"Unsupported format: {format}")

        return True

    except (OSError, ValueError, TypeError) as e:
        logger.error(f"Error exporting data to {filename}: {e}")
        return False


def load_data(filename: str):
    """
    Load results from file; the format follows the suffix.

    Returns:
        dict for .json, list of event dicts for .jsonl / .jsonl.gz, list of
        row dicts for .csv, None on failure
    """
    filepath = Path(filename)
    suffixes = "".join(filepath.suffixes[-2:]).lower()

    try:
        if suffixes.endswith(".jsonl") or suffixes.endswith(".jsonl.gz"):
            return read_trace(str(filepath))

        if filepath.suffix.lower() == '.csv':
            with _open(filepath, 'r') as f:
                return list(csv.DictReader(f))

        with open(filepath, 'r') as f:
            return json.load(f)

    except (OSError, ValueError) as e:
        logger.error(f"Error loading {filename}: {e}")
        return None


def scenario_row(config: Dict[str, Any]) -> Dict[str, Any]:
    return {key: config.get(key, "") for key in SCENARIO_COLUMNS}


def create_parameter_sweep_config(param_name: str,
                                  start: float,
                                  end: float,
                                  num_points: int,
                                  base_config: Optional[Dict[str, Any]] = None) -> List[Dict[str, Any]]:
    """
    Create scenario dictionaries for a parameter sweep.

    Args:
        param_name: Scenario field to sweep
        start: Starting value
        end: Ending value
        num_points: Number of points in sweep
        base_config: Base scenario dictionary

    Returns:
        List of scenario dictionaries, each named after its sweep point
    """
    if base_config is None:
        base_config = Scenario().to_json()

    integral = isinstance(base_config.get(param_name, getattr(Scenario(), param_name, 0.0)), int)
    configs = []
    for value in np.linspace(start, end, num_points):
        config = dict(base_config)
        config[param_name] = int(round(value)) if integral else float(value)
        if param_name == "n":
            config["f"] = (config["n"] - 1) // 3
        config["name"] = f"{param_name}={config[param_name]}"
        configs.append(config)
    return configs


def _sweep_one(scenario: Scenario) -> Dict[str, Any]:
    from .simulation import Simulation

    row = scenario_row(scenario.to_json())
    try:
        results = Simulation(scenario).run()
    except BeaconBftError as e:
        row["error"] = str(e)
        return row
    row.update(results.metrics.to_row())
    row["error"] = ""
    return row


def run_sweep(scenarios: Sequence[Scenario], parallel: int = 1) -> List[Dict[str, Any]]:
    """
    Run every scenario and return one row per scenario, in input order.

    Scenarios share nothing, so ``parallel > 1`` spreads them over worker
    processes. A failing scenario yields a row with its error and the sweep
    continues.
    """
    if parallel > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_one, scenarios))
    else:
        rows = [_sweep_one(s) for s in scenarios]
    logger.info(f"sweep finished: {len(rows)} scenario(s), "
                f"{sum(1 for r in rows if r.get('error'))} error(s)")
    return rows


def benchmark_performance(node_counts: Optional[List[int]] = None,
                          rounds: int = 20, seed: int = 0) -> Dict[str, Any]:
    """
    Benchmark simulator throughput across roster sizes.

    Args:
        node_counts: Roster sizes to test (f is set to (n-1)//3)
        rounds: Committed heights per run
        seed: Scenario seed

    Returns:
        Benchmark results dictionary
    """
    if node_counts is None:
        node_counts = [4, 16, 31, 64]

    # Import here to avoid circular imports
    from .simulation import Simulation

    results: Dict[str, Any] = {
        'node_counts': [],
        'execution_times': [],
        'events_per_second': [],
        'heights_per_second': [],
        'messages_sent': [],
        'rounds': rounds,
    }

    for n in node_counts:
        print(f"Benchmarking n={n}...")
        scenario = Scenario(n=n, f=(n - 1) // 3, rounds=rounds, seed=seed, name=f"bench-{n}")
        try:
            start_time = time.time()
            run_results = Simulation(scenario).run()
            execution_time = time.time() - start_time
        except BeaconBftError as e:
            print(f"Error benchmarking n={n}: {e}")
            continue

        results['node_counts'].append(n)
        results['execution_times'].append(execution_time)
        results['events_per_second'].append(run_results.metadata['events_per_second'])
        results['heights_per_second'].append(run_results.metrics.commits / execution_time
                                             if execution_time > 0 else 0.0)
        results['messages_sent'].append(run_results.metrics.messages_sent)

    if results['execution_times']:
        results['fastest_n'] = results['node_counts'][int(np.argmax(results['heights_per_second']))]
        results['slowest_n'] = results['node_counts'][int(np.argmin(results['heights_per_second']))]

    return results


def print_system_info():
    """Print system information and package status."""
    import platform
    import sys

    print("🔗 Beacon BFT - System Information")
    print("=" * 60)
    print(f"Python Version: {sys.version}")
    print(f"Platform: {platform.platform()}")
    print(f"Architecture: {platform.architecture()[0]}")
    print(f"Processor: {platform.processor()}")

    dependencies = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'matplotlib': 'matplotlib',
        'plotly': 'plotly',
        'py_ecc': 'py_ecc',
        'cryptography': 'cryptography',
    }

    print("\n📦 Package Dependencies:")
    for name, import_name in dependencies.items():
        try:
            module = __import__(import_name)
            version = getattr(module, '__version__', 'unknown')
            print(f"  ✅ {name}: {version}")
        except ImportError:
            print(f"  ❌ {name}: Not installed")

    print("\n" + "=" * 60)
