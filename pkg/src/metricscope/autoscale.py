"""Threshold scaling-rule synthesis and deterministic offline replay.

The guiding metric is the one appearing most often in dependency-graph
relations. Its scale-up threshold is the largest metric quantile for which the
calibration intervals at or below it violate the SLA at most 5% of the time;
the scale-down threshold is fixed at 0.8x the scale-up value.

Replay walks a recorded (metric, latency percentile) trace interval by
interval. The trace is interpreted as demand observed at a baseline capacity;
effective per-instance load scales as baseline/instances, so scaling actions
feed back into both the rule input and the SLA check. With the instance count
pinned at the baseline this reduces to a plain reading of the trace.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .causality import DependencyGraph

VIOLATION_BUDGET = 0.05
DOWN_RATIO = 0.8
_GRID_PERCENTILES = range(50, 100)


class AutoscaleError(ValueError):
    pass


@dataclass(frozen=True)
class SlaSpec:
    percentile: float = 0.90
    bound_ms: float = 1000.0

    def __post_init__(self) -> None:
        if not (0.0 < self.percentile < 1.0):
            raise AutoscaleError("SLA percentile must be in (0, 1)")
        if self.bound_ms <= 0:
            raise AutoscaleError("SLA bound must be positive")


@dataclass(frozen=True)
class ScalingRule:
    metric: str
    up_threshold: float
    down_threshold: float
    delta: int = 1
    min_instances: int = 1
    max_instances: int = 10
    cooldown_intervals: int = 12

    def __post_init__(self) -> None:
        if self.down_threshold >= self.up_threshold:
            raise AutoscaleError("down_threshold must be below up_threshold")
        if not (1 <= self.min_instances <= self.max_instances):
            raise AutoscaleError("need 1 <= min_instances <= max_instances")
        if abs(self.delta) != 1:
            raise AutoscaleError("scaling actions move one instance at a time")
        if self.cooldown_intervals < 0:
            raise AutoscaleError("cooldown_intervals must be >= 0")


@dataclass(frozen=True, eq=False)
class ReplayTrace:
    metric: np.ndarray
    latency_ms: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.metric, dtype=float)
        l = np.asarray(self.latency_ms, dtype=float)
        if m.ndim != 1 or len(m) == 0 or len(m) != len(l):
            raise AutoscaleError("trace needs equal-length non-empty metric and latency columns")
        object.__setattr__(self, "metric", m)
        object.__setattr__(self, "latency_ms", l)

    def __len__(self) -> int:
        return len(self.metric)


@dataclass(frozen=True)
class ReplayResult:
    actions: tuple[tuple[int, int], ...]
    violations: int
    samples: int
    mean_instances: float
    instances: tuple[int, ...]


def select_guiding_metric(graph: DependencyGraph) -> str:
    """Metric participating in the most dependency edges, as "component/metric".

    Ties resolve to the lowest mean p-value across its edges, then to the
    lexicographically smallest name.
    """
    incidence = graph.metric_incidence()
    if not incidence:
        raise AutoscaleError("dependency graph has no edges; cannot pick a guiding metric")
    scored = [
        (-len(ps), float(np.mean(ps)), f"{comp}/{metric}")
        for (comp, metric), ps in incidence.items()
    ]
    scored.sort()
    return scored[0][2]


def _violation_fraction(trace: ReplayTrace, sla: SlaSpec, quantile_value: float) -> float | None:
    mask = trace.metric <= quantile_value
    if not mask.any():
        return None
    return float(np.mean(trace.latency_ms[mask] > sla.bound_ms))


def derive_thresholds(trace: ReplayTrace, sla: SlaSpec) -> tuple[float, float]:
    """(up, down) thresholds for the guiding metric from a calibration trace.

    Scans metric percentiles 50..99 for the largest one whose at-or-below
    intervals keep the SLA violation fraction within the 5% budget, then
    binary-searches the fractional percentile boundary. down = 0.8 * up.
    """
    violating = trace.latency_ms > sla.bound_ms
    if not violating.any() or violating.all():
        raise AutoscaleError(
            "calibration trace must contain both compliant and violating intervals"
        )
    feasible = []
    for pct in _GRID_PERCENTILES:
        q = float(np.percentile(trace.metric, pct))
        frac = _violation_fraction(trace, sla, q)
        if frac is not None and frac <= VIOLATION_BUDGET:
            feasible.append(pct)
    if not feasible:
        raise AutoscaleError(
            "no threshold satisfies the violation budget; lower the SLA target "
            "or provision more capacity before deriving scaling rules"
        )
    lo = float(feasible[-1])
    hi = lo + 1.0
    for _ in range(30):
        mid = (lo + hi) / 2.0
        q = float(np.percentile(trace.metric, min(mid, 100.0)))
        frac = _violation_fraction(trace, sla, q)
        if frac is not None and frac <= VIOLATION_BUDGET:
            lo = mid
        else:
            hi = mid
    up = float(np.percentile(trace.metric, min(lo, 100.0)))
    return up, DOWN_RATIO * up


def replay(
    rule: ScalingRule,
    trace: ReplayTrace,
    initial_instances: int,
    sla: SlaSpec | None = None,
    baseline_instances: int | None = None,
) -> ReplayResult:
    """Deterministically replay a scaling rule over a recorded trace.

    Per interval, in order: the SLA check runs on the capacity-adjusted
    latency, then (when not cooling down) the rule compares the
    capacity-adjusted metric against its thresholds and moves the instance
    count one step, starting the cooldown. The instance count never leaves
    [min_instances, max_instances].
    """
    sla = sla or SlaSpec()
    if len(trace) == 0:
        raise AutoscaleError("cannot replay an empty trace")
    if not (rule.min_instances <= initial_instances <= rule.max_instances):
        raise AutoscaleError("initial_instances outside [min_instances, max_instances]")
    baseline = baseline_instances if baseline_instances is not None else initial_instances
    if baseline < 1:
        raise AutoscaleError("baseline_instances must be >= 1")

    instances = initial_instances
    cooldown = 0
    violations = 0
    actions: list[tuple[int, int]] = []
    per_interval: list[int] = []
    for t in range(len(trace)):
        factor = baseline / instances
        if trace.latency_ms[t] * factor > sla.bound_ms:
            violations += 1
        effective_metric = trace.metric[t] * factor
        if cooldown > 0:
            cooldown -= 1
        elif effective_metric > rule.up_threshold and instances < rule.max_instances:
            instances += rule.delta
            actions.append((t, rule.delta))
            cooldown = rule.cooldown_intervals
        elif effective_metric < rule.down_threshold and instances > rule.min_instances:
            instances -= rule.delta
            actions.append((t, -rule.delta))
            cooldown = rule.cooldown_intervals
        per_interval.append(instances)
    return ReplayResult(
        actions=tuple(actions),
        violations=violations,
        samples=len(trace),
        mean_instances=float(np.mean(per_interval)),
        instances=tuple(per_interval),
    )


def load_trace(path: str | Path) -> ReplayTrace:
    """Read a replay trace CSV with header ``interval,metric_value,latency_p90_ms``."""
    path = Path(path)
    if not path.exists():
        raise AutoscaleError(f"trace file does not exist: {path}")
    metric: list[float] = []
    latency: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["interval", "metric_value", "latency_p90_ms"]:
            raise AutoscaleError(f"{path}: expected header interval,metric_value,latency_p90_ms")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise AutoscaleError(f"{path}:{lineno}: expected 3 fields")
            try:
                metric.append(float(row[1]))
                latency.append(float(row[2]))
            except ValueError:
                raise AutoscaleError(f"{path}:{lineno}: bad numeric value") from None
    return ReplayTrace(metric=np.array(metric), latency_ms=np.array(latency))


def save_trace(trace: ReplayTrace, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["interval", "metric_value", "latency_p90_ms"])
        for i, (m, l) in enumerate(zip(trace.metric, trace.latency_ms)):
            writer.writerow([i, repr(float(m)), repr(float(l))])


def save_rule(rule: ScalingRule, path: str | Path) -> None:
    doc = {
        "metric": rule.metric,
        "up_threshold": rule.up_threshold,
        "down_threshold": rule.down_threshold,
        "delta": rule.delta,
        "min_instances": rule.min_instances,
        "max_instances": rule.max_instances,
        "cooldown_intervals": rule.cooldown_intervals,
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_rule(path: str | Path) -> ScalingRule:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    return ScalingRule(
        metric=doc["metric"],
        up_threshold=float(doc["up_threshold"]),
        down_threshold=float(doc["down_threshold"]),
        delta=int(doc.get("delta", 1)),
        min_instances=int(doc.get("min_instances", 1)),
        max_instances=int(doc.get("max_instances", 10)),
        cooldown_intervals=int(doc.get("cooldown_intervals", 12)),
    )


def save_replay(result: ReplayResult, path: str | Path) -> None:
    doc = {
        "actions": [[t, d] for t, d in result.actions],
        "violations": result.violations,
        "samples": result.samples,
        "mean_instances": result.mean_instances,
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
