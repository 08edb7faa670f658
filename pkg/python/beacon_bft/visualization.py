"""
Report figures for simulation runs
"""

from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go

from .analysis import FairnessReport, commit_latencies, corrupt_nodes


def plot_leader_histogram(counts: Mapping[Any, int],
                          malicious: Sequence[int] = (),
                          title: str = "Leader Election Frequency",
                          figsize: Tuple[int, int] = (10, 5)) -> plt.Figure:
    """
    Bar chart of views led per node with the uniform expectation and its
    3-sigma band.

    Args:
        counts: node id -> views led (string keys from JSON are accepted)
        malicious: Corrupted node ids, drawn in red
        title: Plot title
        figsize: Figure size (width, height)

    Returns:
        matplotlib Figure object
    """
    nodes = sorted(int(k) for k in counts)
    values = np.array([counts.get(node, counts.get(str(node), 0)) for node in nodes], dtype=float)
    total = values.sum()
    n = max(len(nodes), 1)
    expected = total / n
    sigma = np.sqrt(total * (1 / n) * (1 - 1 / n))

    fig, ax = plt.subplots(figsize=figsize)
    colors = ['tab:red' if node in set(malicious) else 'tab:blue' for node in nodes]
    ax.bar([str(node) for node in nodes], values, color=colors, alpha=0.8)
    ax.axhline(expected, color='k', linestyle='--', linewidth=1, label='uniform')
    ax.axhspan(expected - 3 * sigma, expected + 3 * sigma, color='grey', alpha=0.2, label='±3σ')
    ax.set_xlabel('Node')
    ax.set_ylabel('Views led')
    ax.set_title(title)
    ax.legend()
    ax.grid(True, axis='y', alpha=0.3)
    return fig


def plot_streak_histogram(report: FairnessReport,
                          figsize: Tuple[int, int] = (8, 5)) -> plt.Figure:
    """Observed vs expected malicious-leader streaks for d = 1..3."""
    lengths = [s.length for s in report.streaks]
    observed = [s.observed for s in report.streaks]
    expected = [s.expected for s in report.streaks]
    errors = [3 * s.sigma for s in report.streaks]

    fig, ax = plt.subplots(figsize=figsize)
    x = np.arange(len(lengths))
    ax.bar(x - 0.2, observed, width=0.4, label='observed')
    ax.bar(x + 0.2, expected, width=0.4, yerr=errors, capsize=4, alpha=0.7, label='expected ±3σ')
    ax.set_xticks(x)
    ax.set_xticklabels([f"d={d}" for d in lengths])
    ax.set_ylabel('Blocks of d views, all malicious')
    ax.set_yscale('log')
    ax.set_title(f'Malicious-Leader Streaks ({report.views} views)')
    ax.legend()
    ax.grid(True, axis='y', alpha=0.3)
    return fig


def plot_latency_cdf(trace: Sequence[Mapping[str, Any]],
                     delta: float = 1.0,
                     figsize: Tuple[int, int] = (8, 5)) -> plt.Figure:
    """Empirical CDF of commit latency, in units of delta."""
    latencies = np.sort(np.array(commit_latencies(trace), dtype=float)) / delta

    fig, ax = plt.subplots(figsize=figsize)
    if latencies.size:
        ax.step(latencies, np.arange(1, latencies.size + 1) / latencies.size, where='post', linewidth=2)
    ax.axvline(7, color='r', linestyle='--', linewidth=1, label='7Δ')
    ax.set_xlabel('Commit latency (Δ)')
    ax.set_ylabel('Fraction of commits')
    ax.set_title('Confirmation Latency')
    ax.legend()
    ax.grid(True, alpha=0.3)
    return fig


def plot_commit_timeline(trace: Sequence[Mapping[str, Any]],
                         title: str = "Commit Timeline") -> go.Figure:
    """
    Interactive height-over-time plot, one line per node, with timeouts
    marked.

    Returns:
        Plotly Figure object
    """
    corrupt = corrupt_nodes(trace)
    commits: Dict[int, Tuple[list, list]] = {}
    timeouts: Tuple[list, list] = ([], [])
    for event in trace:
        node = event.get("node")
        if node is None:
            continue
        if event.get("event") == "commit":
            xs, ys = commits.setdefault(node, ([], []))
            xs.append(event["time"])
            ys.append(event["height"] + 1)
        elif event.get("event") == "timeout":
            timeouts[0].append(event["time"])
            timeouts[1].append(event["height"])

    fig = go.Figure()
    for node in sorted(commits):
        xs, ys = commits[node]
        fig.add_trace(go.Scatter(
            x=xs, y=ys, mode='lines', line_shape='hv',
            name=f"node {node}" + (" (corrupt)" if node in corrupt else ""),
            line=dict(dash='dot' if node in corrupt else 'solid'),
        ))
    if timeouts[0]:
        fig.add_trace(go.Scatter(x=timeouts[0], y=timeouts[1], mode='markers', name='timeout',
                                 marker=dict(symbol='x', size=6, color='red')))

    fig.update_layout(
        title=title,
        xaxis_title='Simulated time',
        yaxis_title='Committed height',
        width=900,
        height=500,
    )
    return fig


def plot_metrics_dashboard(results, figsize: Tuple[int, int] = (15, 10)) -> plt.Figure:
    """
    Dashboard of one run: commit progress, latency distribution, leader
    counts, views per height and the metrics table.

    Args:
        results: SimulationResults object
        figsize: Figure size

    Returns:
        matplotlib Figure with subplots
    """
    trace = results.trace
    metrics = results.metrics
    corrupt = corrupt_nodes(trace)

    fig, axes = plt.subplots(2, 3, figsize=figsize)
    fig.suptitle('Simulation Dashboard', fontsize=16)

    # Committed height over time per honest node
    per_node: Dict[int, list] = {}
    for event in trace:
        if event.get("event") == "commit" and event["node"] not in corrupt:
            per_node.setdefault(event["node"], []).append((event["time"], event["height"] + 1))
    for node, points in sorted(per_node.items()):
        times, heights = zip(*points)
        axes[0, 0].step(times, heights, where='post', linewidth=1)
    axes[0, 0].set_xlabel('Time')
    axes[0, 0].set_ylabel('Height')
    axes[0, 0].set_title('Commit Progress')
    axes[0, 0].grid(True, alpha=0.3)

    # Latency histogram
    latencies = commit_latencies(trace)
    if latencies:
        axes[0, 1].hist(latencies, bins=30, alpha=0.7)
    axes[0, 1].set_xlabel('Latency')
    axes[0, 1].set_ylabel('Commits')
    axes[0, 1].set_title('Commit Latency')
    axes[0, 1].grid(True, alpha=0.3)

    # Leader histogram
    hist = metrics.leader_histogram
    nodes = sorted(hist)
    axes[0, 2].bar([str(n) for n in nodes], [hist[n] for n in nodes],
                   color=['tab:red' if n in corrupt else 'tab:blue' for n in nodes])
    axes[0, 2].set_xlabel('Node')
    axes[0, 2].set_ylabel('Views led')
    axes[0, 2].set_title('Leaders')

    # Views needed per height
    views_per_height: Dict[int, set] = {}
    for event in trace:
        if event.get("event") == "enter_view" and event["node"] not in corrupt:
            views_per_height.setdefault(event["height"], set()).add(event["view"])
    if views_per_height:
        heights = sorted(views_per_height)
        axes[1, 0].bar(heights, [len(views_per_height[h]) for h in heights])
    axes[1, 0].set_xlabel('Height')
    axes[1, 0].set_ylabel('Views')
    axes[1, 0].set_title('Views per Height')
    axes[1, 0].grid(True, alpha=0.3)

    # Malicious streaks
    streaks = metrics.streak_histogram
    if streaks:
        axes[1, 1].bar([str(k) for k in sorted(streaks)], [streaks[k] for k in sorted(streaks)])
    axes[1, 1].set_xlabel('Maximal run length')
    axes[1, 1].set_ylabel('Count')
    axes[1, 1].set_title('Malicious-Leader Runs')

    # Metrics table
    axes[1, 2].axis('off')
    summary = {k: v for k, v in metrics.to_json().items() if not isinstance(v, dict)}
    lines = [f"{k}: {v:.4g}" if isinstance(v, float) else f"{k}: {v}" for k, v in summary.items()]
    axes[1, 2].text(0.05, 0.95, '\n'.join(lines),
                    transform=axes[1, 2].transAxes,
                    verticalalignment='top',
                    fontfamily='monospace',
                    fontsize=9)
    axes[1, 2].set_title('Metrics')

    plt.tight_layout()
    return fig


def save_report(results, out_dir: str, fairness: Optional[FairnessReport] = None) -> Dict[str, str]:
    """Write the dashboard, latency CDF and timeline (plus fairness figures) into ``out_dir``."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    delta = results.metadata.get('scenario_config', {}).get('delta', 1.0)
    written = {}

    for name, fig in (("dashboard.png", plot_metrics_dashboard(results)),
                      ("latency_cdf.png", plot_latency_cdf(results.trace, delta))):
        fig.savefig(out / name, dpi=120)
        plt.close(fig)
        written[name] = str(out / name)

    if fairness is not None:
        for name, fig in (("leaders.png", plot_leader_histogram(fairness.counts, fairness.malicious)),
                          ("streaks.png", plot_streak_histogram(fairness))):
            fig.savefig(out / name, dpi=120)
            plt.close(fig)
            written[name] = str(out / name)

    timeline = out / "timeline.html"
    plot_commit_timeline(results.trace).write_html(str(timeline))
    written["timeline.html"] = str(timeline)
    return written
