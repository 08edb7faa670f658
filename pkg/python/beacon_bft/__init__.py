"""
Beacon BFT - Python Package
===========================

A beacon-driven rotating-leader Byzantine fault tolerant consensus protocol
with a deterministic network simulator to exercise it.

This package provides:
- Threshold BLS randomness beacon with a local distributed key generation
- Identity-gated, permissionless membership with Sybil-preventing nullifiers
- The consensus replica as pure transition functions with transferable
  commit certificates
- A seeded discrete-event simulator with adversarial schedulers and
  post-hoc safety, liveness and fairness checks
- Economic-safety formulas and the mining-reward table recomputation
- Command-line interface (``beacon-bft``)

Example usage:
    >>> import beacon_bft as bb
    >>> scenario = bb.Scenario(n=4, f=1, rounds=10, seed=1)
    >>> metrics, trace = bb.run(scenario)
    >>> bb.check_safety(trace)
    []
"""

__version__ = "1.0.0"
__author__ = "Beacon BFT Team"
__email__ = "info@example.com"

from .errors import (
    AdmissionError,
    AdmissionReason,
    BeaconBftError,
    ConfigurationError,
    EmptyRosterError,
    InsufficientSharesError,
    InsufficientVotesError,
    NotLeaderError,
    ParameterError,
)
from .beacon import (
    BeaconOutput,
    MockBeacon,
    ThresholdBeacon,
    aggregate,
    dkg_run,
    mock_beacon,
    partial_sign,
    verify_output,
)
from .membership import (
    Credential,
    Issuer,
    Roster,
    admit,
    advance_epoch,
    issue_credential,
)
from .config import Scenario, load_matrix, load_scenario
from .simulation import Simulation, SimulationResults, run
from .analysis import (
    Metrics,
    check_delays,
    check_liveness,
    check_safety,
    compute_metrics,
    election_trace,
    fairness_report,
)
from .utils import export_data, load_data, run_sweep

__all__ = [
    # Errors
    "AdmissionError",
    "AdmissionReason",
    "BeaconBftError",
    "ConfigurationError",
    "EmptyRosterError",
    "InsufficientSharesError",
    "InsufficientVotesError",
    "NotLeaderError",
    "ParameterError",

    # Beacon
    "BeaconOutput",
    "MockBeacon",
    "ThresholdBeacon",
    "aggregate",
    "dkg_run",
    "mock_beacon",
    "partial_sign",
    "verify_output",

    # Membership
    "Credential",
    "Issuer",
    "Roster",
    "admit",
    "advance_epoch",
    "issue_credential",

    # Simulation
    "Scenario",
    "load_matrix",
    "load_scenario",
    "Simulation",
    "SimulationResults",
    "run",

    # Analysis
    "Metrics",
    "check_delays",
    "check_liveness",
    "check_safety",
    "compute_metrics",
    "election_trace",
    "fairness_report",

    # Utility functions
    "export_data",
    "load_data",
    "run_sweep",
]


def check_installation():
    """Check that the pairing backend signs and verifies a beacon round."""
    try:
        beacon = ThresholdBeacon.create(3, 2, seed=0)
        ok = beacon.verify(beacon.output(0))
    except Exception as e:  # noqa: BLE001 - any backend failure means a broken install
        print(f"⚠️  Threshold beacon not working: {e}")
        print("   The mock beacon still works; scenarios default to it.")
        return False
    if not ok:
        print("⚠️  Threshold beacon output failed verification")
        return False
    print(f"✅ Beacon BFT package v{__version__} ready!")
    return True


def quick_demo():
    """Run a quick demonstration of the package capabilities."""
    print("🔗 Beacon BFT - Quick Demo")
    print("=" * 50)

    scenario = Scenario(n=4, f=1, rounds=10, seed=1, name="quick-demo")
    print(f"Running {scenario.rounds} heights on {scenario.n} nodes (f={scenario.f})...")
    results = Simulation(scenario).run()
    m = results.metrics

    print(f"✅ Committed {m.commits} heights in {m.views} views")
    print(f"   Median latency: {m.latency_p50:.2f} (delta = {scenario.delta})")
    print(f"   Safety violations: {m.safety_violations}")
    print(f"   Liveness stalls: {m.liveness_stalls}")
    print(f"   Execution time: {results.metadata['execution_time']:.3f} s")

    print("\nTo explore further:")
    print("  $ beacon-bft sim run --scenario fixtures/scenario_n4.json --out out/")
    print("  $ beacon-bft econ table3")

    return results
