"""Render analysis results as matplotlib figures plus delimited tables.

Figures go to PNG files next to CSV summaries so a run can be inspected
without re-loading JSON artifacts: per-component cluster sheets (members in
gray, centroid in color), a dependency-graph diagram, and a replay timeline.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .autoscale import ReplayResult, ReplayTrace, ScalingRule, SlaSpec
from .causality import DependencyGraph
from .clustering import ClusterModel
from .distance import sbd_to_centroids
from .preprocess import UniformSeries


def write_cluster_table(
    models: list[ClusterModel], prepared: list[UniformSeries], path: str | Path
) -> None:
    """clusters.csv: one row per metric with its cluster, role and centroid distance."""
    by_key = {u.key: u for u in prepared}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["component", "cluster", "metric", "is_representative", "sbd_to_centroid"]
        )
        for model in sorted(models, key=lambda m: m.component):
            for cluster in model.clusters:
                members = sorted(cluster.members)
                X = np.stack([by_key[(model.component, m)].values for m in members])
                dist, _ = sbd_to_centroids(X, cluster.centroid[None, :])
                for metric, d in zip(members, dist[:, 0]):
                    writer.writerow(
                        [
                            model.component,
                            cluster.id,
                            metric,
                            int(metric == cluster.representative),
                            f"{float(d):.6f}",
                        ]
                    )


def write_edge_table(graph: DependencyGraph, path: str | Path) -> None:
    """edges.csv mirroring the dependency graph JSON."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["src_component", "src_metric", "dst_component", "dst_metric", "lag_ms", "p_value"]
        )
        for e in graph.edges:
            writer.writerow(
                [e.src_component, e.src_metric, e.dst_component, e.dst_metric, e.lag_ms,
                 f"{e.p_value:.6g}"]
            )


def render_cluster_figures(
    models: list[ClusterModel], prepared: list[UniformSeries], outdir: str | Path
) -> list[Path]:
    """One figure per component: a panel per cluster with members and centroid."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_key = {u.key: u for u in prepared}
    paths = []
    for model in sorted(models, key=lambda m: m.component):
        k = model.k
        fig, axes = plt.subplots(k, 1, figsize=(8, 2.2 * k), squeeze=False, sharex=True)
        for ax, cluster in zip(axes[:, 0], model.clusters):
            for metric in sorted(cluster.members):
                ax.plot(by_key[(model.component, metric)].values, color="0.75", lw=0.7)
            ax.plot(cluster.centroid, color="tab:blue", lw=1.8, label="centroid")
            rep = cluster.representative or "-"
            ax.set_title(
                f"cluster {cluster.id} ({len(cluster.members)} metrics, rep {rep})",
                fontsize=9,
            )
        axes[-1, 0].set_xlabel("interval")
        fig.suptitle(f"{model.component}: k={k}, silhouette={model.silhouette:.3f}")
        fig.tight_layout()
        path = outdir / f"clusters_{model.component}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def render_dependency_graph(graph: DependencyGraph, path: str | Path) -> Path:
    """Circular component layout with directed metric-relation arrows."""
    components = sorted(
        {e.src_component for e in graph.edges} | {e.dst_component for e in graph.edges}
    )
    fig, ax = plt.subplots(figsize=(7, 7))
    if components:
        angles = np.linspace(0.0, 2.0 * np.pi, len(components), endpoint=False)
        pos = {c: (np.cos(a), np.sin(a)) for c, a in zip(components, angles)}
        pair_counts: dict[tuple[str, str], int] = {}
        for e in graph.edges:
            pair = (e.src_component, e.dst_component)
            pair_counts[pair] = pair_counts.get(pair, 0) + 1
        for (src, dst), count in sorted(pair_counts.items()):
            (x0, y0), (x1, y1) = pos[src], pos[dst]
            ax.annotate(
                "",
                xy=(x1, y1),
                xytext=(x0, y0),
                arrowprops={
                    "arrowstyle": "-|>",
                    "lw": 0.8 + 0.5 * count,
                    "color": "tab:blue",
                    "shrinkA": 18,
                    "shrinkB": 18,
                },
            )
            ax.text((x0 + x1) / 2, (y0 + y1) / 2, str(count), fontsize=8, color="tab:red")
        for comp, (x, y) in pos.items():
            ax.plot(x, y, "o", ms=14, color="0.85", mec="0.4")
            ax.text(x, y - 0.12, comp, ha="center", fontsize=9)
    else:
        ax.text(0.5, 0.5, "no dependency edges", ha="center", va="center")
    ax.set_xlim(-1.4, 1.4)
    ax.set_ylim(-1.4, 1.4)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title(f"dependency graph: {len(graph.edges)} metric relations")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_replay(
    rule: ScalingRule,
    trace: ReplayTrace,
    result: ReplayResult,
    sla: SlaSpec,
    path: str | Path,
) -> Path:
    """Timeline of metric vs thresholds, latency vs bound, and instance count."""
    t = np.arange(len(trace))
    fig, (ax_m, ax_l, ax_i) = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    ax_m.plot(t, trace.metric, lw=0.9, color="0.3", label="metric")
    ax_m.axhline(rule.up_threshold, color="tab:red", ls="--", lw=1, label="up threshold")
    ax_m.axhline(rule.down_threshold, color="tab:green", ls="--", lw=1, label="down threshold")
    ax_m.set_ylabel(rule.metric)
    ax_m.legend(fontsize=8, loc="upper right")

    ax_l.plot(t, trace.latency_ms, lw=0.9, color="0.3")
    ax_l.axhline(sla.bound_ms, color="tab:red", ls="--", lw=1)
    ax_l.set_ylabel("latency percentile [ms]")

    ax_i.step(t, result.instances, where="post", color="tab:blue")
    for when, delta in result.actions:
        ax_i.axvline(when, color="tab:orange" if delta > 0 else "tab:green", lw=0.6, alpha=0.6)
    ax_i.set_ylabel("instances")
    ax_i.set_xlabel("interval")

    fig.suptitle(
        f"replay: {result.violations}/{result.samples} violations, "
        f"{len(result.actions)} actions, mean instances {result.mean_instances:.2f}"
    )
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_run_reports(
    models: list[ClusterModel],
    prepared: list[UniformSeries],
    graph: DependencyGraph,
    outdir: str | Path,
) -> list[Path]:
    """Full report bundle for a pipeline run directory."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_cluster_table(models, prepared, outdir / "clusters.csv")
    write_edge_table(graph, outdir / "edges.csv")
    paths = [outdir / "clusters.csv", outdir / "edges.csv"]
    paths.extend(render_cluster_figures(models, prepared, outdir))
    paths.append(render_dependency_graph(graph, outdir / "depgraph.png"))
    return paths
