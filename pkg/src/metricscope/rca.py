"""Root-cause diffing of a correct (C) and a faulty (F) version snapshot.

The comparison walks three granularities. Metric level: which metrics appeared
or disappeared between versions; components ranked by that novelty count.
Cluster level: clusters holding new/discarded metrics are novel; cluster
identity across versions is tracked by a one-sided similarity score
S = |intersection of C and F members| / |C members| (new metrics in the faulty cluster
carry no penalty). Edge level: dependency edges touching novel clusters,
edges that appear or disappear between matched clusters, and matched edges
whose time lag changed. The output is a ranked list of {component, metric
list} candidates with the edge events as evidence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .causality import DependencyEdge, DependencyGraph, load_graph
from .clustering import ClusterModel, load_models
from .preprocess import load_prepared


class RcaError(ValueError):
    pass


@dataclass(frozen=True)
class RcaConfig:
    similarity_threshold: float = 0.50
    novelty_threshold: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.similarity_threshold <= 1.0):
            raise RcaError("similarity_threshold must be in [0, 1]")
        if self.novelty_threshold < 0:
            raise RcaError("novelty_threshold must be >= 0")


@dataclass(frozen=True)
class NoveltyScore:
    new_count: int
    discarded_count: int

    @property
    def total(self) -> int:
        return self.new_count + self.discarded_count


@dataclass(frozen=True)
class VersionSnapshot:
    """Analysis state of one application version."""

    label: str
    catalog: dict[str, frozenset[str]]
    models: dict[str, ClusterModel]
    depgraph: DependencyGraph

    def __post_init__(self) -> None:
        for component, model in self.models.items():
            known = self.catalog.get(component, frozenset())
            extra = model.members - known
            if extra:
                raise RcaError(
                    f"{self.label}: model of {component} references unknown metrics {sorted(extra)}"
                )


class EventKind(str, Enum):
    NOVEL_CLUSTER_EDGE = "NOVEL_CLUSTER_EDGE"
    EDGE_CHURN = "EDGE_CHURN"
    LAG_CHANGE = "LAG_CHANGE"


@dataclass(frozen=True)
class EdgeEvent:
    kind: EventKind
    version: str  # "C", "F" or "both"
    edge: DependencyEdge
    detail: str = ""

    def metrics_of(self, component: str) -> set[str]:
        out = set()
        if self.edge.src_component == component:
            out.add(self.edge.src_metric)
        if self.edge.dst_component == component:
            out.add(self.edge.dst_metric)
        return out


@dataclass(frozen=True)
class RcaEntry:
    component: str
    rank: int
    novelty: NoveltyScore
    metric_list: tuple[str, ...]
    evidence: tuple[EdgeEvent, ...]


@dataclass(frozen=True)
class RcaReport:
    ranked: tuple[RcaEntry, ...]

    @property
    def reported_metric_count(self) -> int:
        return sum(len(e.metric_list) for e in self.ranked)


def load_snapshot(label: str, directory: str | Path) -> VersionSnapshot:
    """Load a snapshot from a pipeline output directory
    (prepared.json + clusters.json + depgraph.json)."""
    directory = Path(directory)
    prepared = load_prepared(directory / "prepared.json")
    catalog: dict[str, set[str]] = {}
    for u in prepared:
        catalog.setdefault(u.component, set()).add(u.metric)
    models = {m.component: m for m in load_models(directory / "clusters.json")}
    depgraph = load_graph(directory / "depgraph.json")
    return VersionSnapshot(
        label=label,
        catalog={c: frozenset(ms) for c, ms in catalog.items()},
        models=models,
        depgraph=depgraph,
    )


def metric_diff(
    c: VersionSnapshot, f: VersionSnapshot
) -> dict[str, tuple[frozenset[str], frozenset[str]]]:
    """Per-component (new, discarded) metric sets; unchanged metrics drop out."""
    components = sorted(set(c.catalog) | set(f.catalog))
    out = {}
    for comp in components:
        in_c = c.catalog.get(comp, frozenset())
        in_f = f.catalog.get(comp, frozenset())
        out[comp] = (frozenset(in_f - in_c), frozenset(in_c - in_f))
    return out


def rank_novelty(
    diff: dict[str, tuple[frozenset[str], frozenset[str]]]
) -> list[tuple[str, NoveltyScore]]:
    """Components by total novelty desc, then new count desc, then name asc."""
    scored = [
        (comp, NoveltyScore(new_count=len(new), discarded_count=len(discarded)))
        for comp, (new, discarded) in diff.items()
    ]
    scored.sort(key=lambda cn: (-cn[1].total, -cn[1].new_count, cn[0]))
    return scored


def cluster_similarity(mc: frozenset[str] | set[str], mf: frozenset[str] | set[str]) -> float:
    """One-sided overlap |mc & mf| / |mc|; new metrics in mf carry no penalty."""
    if not mc:
        raise RcaError("cluster similarity needs a non-empty correct-version cluster")
    return len(set(mc) & set(mf)) / len(mc)


def match_clusters(
    c_model: ClusterModel, f_model: ClusterModel, cfg: RcaConfig | None = None
) -> dict[int, tuple[int, float]]:
    """Greedy one-to-one matching of C clusters to F clusters by similarity.

    Pairs below the similarity threshold stay unmatched; ties break on
    (c cluster id, f cluster id).
    """
    cfg = cfg or RcaConfig()
    if c_model.component != f_model.component:
        raise RcaError(
            f"cannot match clusters across components "
            f"{c_model.component!r} vs {f_model.component!r}"
        )
    candidates = []
    for cc in c_model.clusters:
        for fc in f_model.clusters:
            s = cluster_similarity(cc.members, fc.members)
            if s >= cfg.similarity_threshold:
                candidates.append((-s, cc.id, fc.id, s))
    candidates.sort()
    mapping: dict[int, tuple[int, float]] = {}
    used_f: set[int] = set()
    for _, c_id, f_id, s in candidates:
        if c_id in mapping or f_id in used_f:
            continue
        mapping[c_id] = (f_id, s)
        used_f.add(f_id)
    return mapping


def _cluster_novelty(
    model: ClusterModel, changed: frozenset[str]
) -> dict[int, int]:
    return {c.id: len(c.members & changed) for c in model.clusters}


def _cluster_level_edge(snapshot: VersionSnapshot, edge: DependencyEdge) -> tuple[int, int] | None:
    """Map a metric edge to (src cluster id, dst cluster id) in its snapshot."""
    try:
        src = snapshot.models[edge.src_component].cluster_of(edge.src_metric).id
        dst = snapshot.models[edge.dst_component].cluster_of(edge.dst_metric).id
    except KeyError:
        return None
    return src, dst


def edge_filter(
    c: VersionSnapshot,
    f: VersionSnapshot,
    mapping: dict[str, dict[int, tuple[int, float]]],
    cfg: RcaConfig | None = None,
) -> list[EdgeEvent]:
    """Emit the three edge-level difference events between two snapshots."""
    cfg = cfg or RcaConfig()
    diff = metric_diff(c, f)
    events: list[EdgeEvent] = []

    novelty: dict[str, dict[str, dict[int, int]]] = {"C": {}, "F": {}}
    for snap, tag in ((c, "C"), (f, "F")):
        for comp, model in snap.models.items():
            new, discarded = diff.get(comp, (frozenset(), frozenset()))
            novelty[tag][comp] = _cluster_novelty(model, new | discarded)

    # event 1: edges touching a novel cluster, in either version
    for snap, tag in ((c, "C"), (f, "F")):
        for edge in snap.depgraph.edges:
            ids = _cluster_level_edge(snap, edge)
            if ids is None:
                continue
            src_novel = novelty[tag][edge.src_component].get(ids[0], 0)
            dst_novel = novelty[tag][edge.dst_component].get(ids[1], 0)
            if max(src_novel, dst_novel) >= cfg.novelty_threshold:
                events.append(
                    EdgeEvent(
                        kind=EventKind.NOVEL_CLUSTER_EDGE,
                        version=tag,
                        edge=edge,
                        detail=f"cluster novelty src={src_novel} dst={dst_novel}",
                    )
                )

    c_ids = {e.sort_key: e for e in c.depgraph.edges}
    f_ids = {e.sort_key: e for e in f.depgraph.edges}

    def endpoints_matched(edge: DependencyEdge, snap_tag: str) -> bool:
        """Both endpoint clusters carried across versions with S >= threshold."""
        snap = c if snap_tag == "C" else f
        ids = _cluster_level_edge(snap, edge)
        if ids is None:
            return False
        out = []
        for comp, cid in ((edge.src_component, ids[0]), (edge.dst_component, ids[1])):
            comp_map = mapping.get(comp, {})
            if snap_tag == "C":
                out.append(cid in comp_map)
            else:
                out.append(any(fid == cid for fid, _ in comp_map.values()))
        return all(out)

    # events 2 and 3: churn and lag changes between matched clusters
    for key in sorted(set(c_ids) | set(f_ids)):
        in_c, in_f = key in c_ids, key in f_ids
        if in_c and in_f:
            ec, ef = c_ids[key], f_ids[key]
            if ec.lag_ms != ef.lag_ms and endpoints_matched(ec, "C"):
                events.append(
                    EdgeEvent(
                        kind=EventKind.LAG_CHANGE,
                        version="both",
                        edge=ef,
                        detail=f"lag {ec.lag_ms}ms -> {ef.lag_ms}ms",
                    )
                )
        elif in_c:
            if endpoints_matched(c_ids[key], "C"):
                events.append(
                    EdgeEvent(
                        kind=EventKind.EDGE_CHURN,
                        version="C",
                        edge=c_ids[key],
                        detail="edge disappeared in faulty version",
                    )
                )
        else:
            if endpoints_matched(f_ids[key], "F"):
                events.append(
                    EdgeEvent(
                        kind=EventKind.EDGE_CHURN,
                        version="F",
                        edge=f_ids[key],
                        detail="edge appeared in faulty version",
                    )
                )
    return events


def rca_report(c: VersionSnapshot, f: VersionSnapshot, cfg: RcaConfig | None = None) -> RcaReport:
    """Ranked {component, metric list} root-cause candidates.

    Components are ordered by metric novelty; each metric list unions the
    members of that component's novel clusters with the metrics referenced by
    edge events. Components with nothing to report are omitted.
    """
    cfg = cfg or RcaConfig()
    diff = metric_diff(c, f)
    ranking = rank_novelty(diff)

    mapping = {
        comp: match_clusters(c.models[comp], f.models[comp], cfg)
        for comp in sorted(set(c.models) & set(f.models))
    }
    events = edge_filter(c, f, mapping, cfg)

    novel_cluster_metrics: dict[str, set[str]] = {}
    for snap in (c, f):
        for comp, model in snap.models.items():
            new, discarded = diff.get(comp, (frozenset(), frozenset()))
            changed = new | discarded
            for cluster in model.clusters:
                if len(cluster.members & changed) >= cfg.novelty_threshold:
                    novel_cluster_metrics.setdefault(comp, set()).update(cluster.members)

    entries = []
    for comp, novelty in ranking:
        comp_events = tuple(
            ev for ev in events if comp in (ev.edge.src_component, ev.edge.dst_component)
        )
        metrics = set(novel_cluster_metrics.get(comp, set()))
        for ev in comp_events:
            metrics.update(ev.metrics_of(comp))
        if not metrics and novelty.total == 0:
            continue
        entries.append((comp, novelty, tuple(sorted(metrics)), comp_events))

    ranked = tuple(
        RcaEntry(component=comp, rank=i + 1, novelty=nov, metric_list=metrics, evidence=evs)
        for i, (comp, nov, metrics, evs) in enumerate(entries)
    )
    return RcaReport(ranked=ranked)


def report_to_dict(report: RcaReport) -> dict:
    return {
        "ranked": [
            {
                "rank": e.rank,
                "component": e.component,
                "novelty": {
                    "new": e.novelty.new_count,
                    "discarded": e.novelty.discarded_count,
                    "total": e.novelty.total,
                },
                "metric_list": list(e.metric_list),
                "evidence": [
                    {
                        "kind": ev.kind.value,
                        "version": ev.version,
                        "detail": ev.detail,
                        "edge": {
                            "src_component": ev.edge.src_component,
                            "src_metric": ev.edge.src_metric,
                            "dst_component": ev.edge.dst_component,
                            "dst_metric": ev.edge.dst_metric,
                            "lag_ms": ev.edge.lag_ms,
                        },
                    }
                    for ev in e.evidence
                ],
            }
            for e in report.ranked
        ]
    }


def save_report(report: RcaReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_report_table(report: RcaReport) -> str:
    """Human-readable table: rank, component, novelty n/d, #metrics, events."""
    header = f"{'rank':>4}  {'component':<24} {'new/disc':>9} {'#metrics':>8}  events"
    lines = [header, "-" * len(header)]
    for e in report.ranked:
        kinds: dict[str, int] = {}
        for ev in e.evidence:
            kinds[ev.kind.value] = kinds.get(ev.kind.value, 0) + 1
        kind_str = ", ".join(f"{k}x{v}" for k, v in sorted(kinds.items())) or "-"
        lines.append(
            f"{e.rank:>4}  {e.component:<24} "
            f"{e.novelty.new_count:>4}/{e.novelty.discarded_count:<4} "
            f"{len(e.metric_list):>8}  {kind_str}"
        )
    return "\n".join(lines)
