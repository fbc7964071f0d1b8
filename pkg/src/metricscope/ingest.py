"""Load metric time series, communication events and call graphs from CSV files.

All loaders validate eagerly and raise :class:`IngestError` with the offending
line number where possible. The resulting catalogs are immutable and safe to
share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

METRICS_HEADER = ["timestamp_ms", "component", "metric", "value"]
EVENTS_HEADER = ["timestamp_ms", "caller", "callee"]
CALLGRAPH_HEADER = ["caller", "callee", "count"]


class IngestError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class RawSample:
    timestamp_ms: int
    value: float

    def __post_init__(self) -> None:
        if self.timestamp_ms < 0:
            raise IngestError(f"negative timestamp {self.timestamp_ms}")
        if not math.isfinite(self.value):
            raise IngestError(f"non-finite value at timestamp {self.timestamp_ms}")


@dataclass(frozen=True)
class MetricSeries:
    """One monitored metric of one component, as ordered raw samples."""

    component: str
    metric: str
    samples: tuple[RawSample, ...]

    def __post_init__(self) -> None:
        if len(self.samples) < 2:
            raise IngestError(
                f"series {self.component}/{self.metric} needs at least 2 samples"
            )
        ts = [s.timestamp_ms for s in self.samples]
        for a, b in zip(ts, ts[1:]):
            if a >= b:
                raise IngestError(
                    f"series {self.component}/{self.metric} has non-increasing "
                    f"timestamps ({a} then {b})"
                )

    @property
    def key(self) -> tuple[str, str]:
        return (self.component, self.metric)


@dataclass(frozen=True)
class MetricCatalog:
    series: tuple[MetricSeries, ...]

    @property
    def components(self) -> frozenset[str]:
        return frozenset(s.component for s in self.series)

    def by_component(self) -> dict[str, list[MetricSeries]]:
        out: dict[str, list[MetricSeries]] = {}
        for s in self.series:
            out.setdefault(s.component, []).append(s)
        return out

    def get(self, component: str, metric: str) -> MetricSeries:
        for s in self.series:
            if s.component == component and s.metric == metric:
                return s
        raise KeyError(f"{component}/{metric} not in catalog")


@dataclass(frozen=True)
class CommEvent:
    timestamp_ms: int
    caller: str
    callee: str


@dataclass(frozen=True)
class CallGraph:
    """Directed component graph; edges carry observed call counts."""

    nodes: frozenset[str]
    edges: tuple[tuple[str, str, int], ...]
    self_calls_dropped: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        for caller, callee, count in self.edges:
            if caller == callee:
                raise IngestError(f"self-edge {caller}->{callee} not allowed")
            if caller not in self.nodes or callee not in self.nodes:
                raise IngestError(f"edge {caller}->{callee} endpoint not in nodes")
            if count < 1:
                raise IngestError(f"edge {caller}->{callee} has count {count} < 1")

    def adjacent_pairs(self) -> list[tuple[str, str]]:
        """Unordered component pairs connected by at least one edge."""
        seen = sorted({tuple(sorted((a, b))) for a, b, _ in self.edges})
        return [(a, b) for a, b in seen]


def _read_rows(path: str | Path, header: list[str]) -> list[tuple[int, list[str]]]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"input file does not exist: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [c.strip() for c in got] != header:
            raise IngestError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, row))
    return rows


def _parse_int(raw: str, path: Path | str, lineno: int, what: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: bad {what} {raw!r}") from None


def load_metrics(path: str | Path) -> MetricCatalog:
    """Parse a metrics CSV (``timestamp_ms,component,metric,value``) into a catalog.

    Rows may arrive in any time order; each series is sorted by timestamp.
    Duplicate (series, timestamp) rows and non-finite values are hard errors.
    """
    grouped: dict[tuple[str, str], list[tuple[int, float, int]]] = {}
    for lineno, row in _read_rows(path, METRICS_HEADER):
        ts = _parse_int(row[0], path, lineno, "timestamp_ms")
        component, metric = row[1].strip(), row[2].strip()
        if not component or not metric:
            raise IngestError(f"{path}:{lineno}: empty component or metric name")
        try:
            value = float(row[3])
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad value {row[3]!r}") from None
        if not math.isfinite(value):
            raise IngestError(f"{path}:{lineno}: non-finite value {row[3]!r}")
        if ts < 0:
            raise IngestError(f"{path}:{lineno}: negative timestamp {ts}")
        grouped.setdefault((component, metric), []).append((ts, value, lineno))

    series = []
    for (component, metric), points in sorted(grouped.items()):
        points.sort(key=lambda p: p[0])
        for (t1, _, _), (t2, _, ln2) in zip(points, points[1:]):
            if t1 == t2:
                raise IngestError(
                    f"{path}:{ln2}: duplicate timestamp {t1} in series {component}/{metric}"
                )
        series.append(
            MetricSeries(
                component=component,
                metric=metric,
                samples=tuple(RawSample(t, v) for t, v, _ in points),
            )
        )
    return MetricCatalog(series=tuple(series))


def save_metrics(catalog: MetricCatalog, path: str | Path) -> None:
    """Write a catalog back to the metrics CSV format (sorted, round-trippable)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for s in sorted(catalog.series, key=lambda s: s.key):
            for sample in s.samples:
                writer.writerow([sample.timestamp_ms, s.component, s.metric, repr(sample.value)])


def load_events(path: str | Path) -> list[CommEvent]:
    events = []
    for lineno, row in _read_rows(path, EVENTS_HEADER):
        ts = _parse_int(row[0], path, lineno, "timestamp_ms")
        caller, callee = row[1].strip(), row[2].strip()
        if not caller or not callee:
            raise IngestError(f"{path}:{lineno}: empty caller or callee")
        events.append(CommEvent(ts, caller, callee))
    return events


def build_call_graph(events: list[CommEvent]) -> CallGraph:
    """Aggregate communication events into a directed call graph.

    Self-calls add no cross-component edge; they are dropped and tallied in
    ``self_calls_dropped``. Both directions of a pair are kept as distinct edges.
    """
    if not events:
        raise IngestError("no communication events given")
    counts: dict[tuple[str, str], int] = {}
    dropped = 0
    for ev in events:
        if ev.caller == ev.callee:
            dropped += 1
            continue
        counts[(ev.caller, ev.callee)] = counts.get((ev.caller, ev.callee), 0) + 1
    if not counts:
        raise IngestError("all events are self-calls; call graph would be empty")
    nodes = frozenset(c for pair in counts for c in pair)
    edges = tuple((a, b, n) for (a, b), n in sorted(counts.items()))
    return CallGraph(nodes=nodes, edges=edges, self_calls_dropped=dropped)


def load_call_graph(path: str | Path) -> CallGraph:
    """Load a call graph directly from its CSV form (``caller,callee,count``)."""
    counts: dict[tuple[str, str], int] = {}
    for lineno, row in _read_rows(path, CALLGRAPH_HEADER):
        caller, callee = row[0].strip(), row[1].strip()
        count = _parse_int(row[2], path, lineno, "count")
        if caller == callee:
            raise IngestError(f"{path}:{lineno}: self-edge {caller}->{callee}")
        if count < 1:
            raise IngestError(f"{path}:{lineno}: count must be >= 1")
        if (caller, callee) in counts:
            raise IngestError(f"{path}:{lineno}: duplicate edge {caller}->{callee}")
        counts[(caller, callee)] = count
    if not counts:
        raise IngestError(f"{path}: call graph has no edges")
    nodes = frozenset(c for pair in counts for c in pair)
    return CallGraph(nodes=nodes, edges=tuple((a, b, n) for (a, b), n in sorted(counts.items())))


def save_call_graph(graph: CallGraph, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CALLGRAPH_HEADER)
        for caller, callee, count in graph.edges:
            writer.writerow([caller, callee, count])
