"""Synthetic multi-component metric datasets with known structure.

Every component gets a handful of latent signals (sums of three random-phase
sinusoids drawn from per-latent period bands, plus an AR(1) term, which gives
each latent a distinct shape and stationary-after-differencing behavior). Each
metric is an affine transform of its latent plus Gaussian noise scaled
relative to the latent's spread. A planted edge (A, B, lag, weight) rewires
one latent of B to be weight * (latent 0 of A lagged by `lag` steps) plus
independent noise, so the causal structure is known exactly.

Generation is deterministic: every component / metric / fault draws from its
own positionally-keyed seed stream, so adding a metric or re-lagging an edge
leaves all untouched series byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .causality import DependencyEdge, DependencyGraph
from .ingest import CallGraph, MetricCatalog, MetricSeries, RawSample

LAG_MARGIN = 32
EDGE_NOISE_RATIO = 1.0
_AR_COEFF = 0.6
_AR_SIGMA = 1.0


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    components: int
    latents_per_component: int
    metrics_per_component: int
    planted_edges: tuple[tuple[int, int, int, float], ...] = ()
    noise_sigma: float = 0.1
    length: int = 512
    interval_ms: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.components < 1 or self.metrics_per_component < 1:
            raise SynthError("need at least one component and one metric per component")
        if not (1 <= self.latents_per_component <= 7):
            raise SynthError("latents_per_component must be in 1..7")
        if self.noise_sigma < 0:
            raise SynthError("noise_sigma must be >= 0")
        if self.length < 64:
            raise SynthError("length must be >= 64 samples")
        for src, dst, lag, weight in self.planted_edges:
            if not (0 <= src < self.components and 0 <= dst < self.components):
                raise SynthError(f"edge ({src},{dst}) references unknown component")
            if src == dst:
                raise SynthError("planted edges must cross components")
            if not (1 <= lag <= LAG_MARGIN):
                raise SynthError(f"edge lag must be in 1..{LAG_MARGIN}, got {lag}")
            if weight == 0:
                raise SynthError("edge weight must be nonzero")
        self._toposort()  # raises on cycles

    def component_name(self, idx: int) -> str:
        return f"comp{idx:02d}"

    def _toposort(self) -> list[int]:
        order: list[int] = []
        incoming = {i: set() for i in range(self.components)}
        outgoing = {i: set() for i in range(self.components)}
        for src, dst, _, _ in self.planted_edges:
            incoming[dst].add(src)
            outgoing[src].add(dst)
        ready = sorted(i for i in range(self.components) if not incoming[i])
        pending = {i: set(v) for i, v in incoming.items()}
        while ready:
            node = ready.pop(0)
            order.append(node)
            for nxt in sorted(outgoing[node]):
                pending[nxt].discard(node)
                if not pending[nxt] and nxt not in order and nxt not in ready:
                    ready.append(nxt)
            ready.sort()
        if len(order) != self.components:
            raise SynthError("planted edges must form a DAG over components")
        return order


@dataclass(frozen=True)
class PlantedEdge:
    src: str
    dst: str
    lag_steps: int
    weight: float
    src_latent: int
    dst_latent: int


@dataclass(frozen=True)
class GroundTruth:
    spec: SynthSpec
    assignment: dict[str, dict[str, int]]
    edges: tuple[PlantedEdge, ...]

    def labels(self, component: str) -> dict[str, int]:
        return dict(self.assignment[component])

    def component_pairs(self) -> set[tuple[str, str]]:
        return {(e.src, e.dst) for e in self.edges}

    def metric_depgraph(self) -> DependencyGraph:
        """Planted truth at metric granularity: every metric of the source
        latent influences every metric of the target latent."""
        edges = []
        for e in self.edges:
            src_metrics = sorted(
                m for m, l in self.assignment[e.src].items() if l == e.src_latent
            )
            dst_metrics = sorted(
                m for m, l in self.assignment[e.dst].items() if l == e.dst_latent
            )
            for sm in src_metrics:
                for dm in dst_metrics:
                    edges.append(
                        DependencyEdge(
                            src_component=e.src,
                            src_metric=sm,
                            dst_component=e.dst,
                            dst_metric=dm,
                            lag_ms=e.lag_steps * self.spec.interval_ms,
                            p_value=0.0,
                        )
                    )
        return DependencyGraph(edges=tuple(edges))

    def call_graph(self) -> CallGraph:
        """Observed-communication graph: the planted edges, or a simple chain
        when nothing was planted (components talk, nothing causally couples)."""
        names = [self.spec.component_name(i) for i in range(self.spec.components)]
        if self.edges:
            edges = tuple(sorted((e.src, e.dst, 1) for e in self.edges))
        else:
            edges = tuple((names[i], names[i + 1], 1) for i in range(len(names) - 1))
        nodes = frozenset(names)
        if not edges:  # single isolated component
            raise SynthError("cannot build a call graph for a single component")
        return CallGraph(nodes=nodes, edges=edges)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _latent_base(
    rng: np.random.Generator, horizon: int, band: int, n_bands: int, length: int
) -> np.ndarray:
    """One latent's base signal: 3 sinusoids from the band's period range + AR(1).

    Periods are capped well below the sample span and the AR term dominates the
    innovation budget; long quasi-deterministic waves would read as trends to
    the unit-root test and leak predictability into reversed causality tests.
    """
    p_max = length / 8.0
    p_min = 10.0
    frac = band / max(1, n_bands - 1) if n_bands > 1 else 0.0
    center = max(p_min, p_max * (p_min / p_max) ** frac)
    t = np.arange(horizon, dtype=float)
    signal = np.zeros(horizon)
    for _ in range(3):
        period = center * rng.uniform(0.8, 1.25)
        amp = rng.uniform(0.25, 0.6)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        signal += amp * np.sin(2.0 * np.pi * t / period + phase)
    innov = rng.normal(0.0, _AR_SIGMA, size=horizon)
    ar = np.empty(horizon)
    ar[0] = innov[0]
    for i in range(1, horizon):
        ar[i] = _AR_COEFF * ar[i - 1] + innov[i]
    return signal + ar


def _component_latents(spec: SynthSpec, comp_idx: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Base latent signals and per-slot edge-noise draws for one component."""
    rng = _rng(spec.seed, comp_idx, 0)
    n = spec.latents_per_component
    base = np.stack(
        [_latent_base(rng, horizon, ell, n, spec.length) for ell in range(n)]
    )
    edge_noise = rng.normal(0.0, 1.0, size=(n, horizon))
    return base, edge_noise


def _resolve_latents(spec: SynthSpec) -> tuple[dict[str, np.ndarray], tuple[PlantedEdge, ...]]:
    """Finalized latent arrays per component, with planted edges applied in
    topological order (so chains propagate)."""
    horizon = spec.length + LAG_MARGIN
    names = [spec.component_name(i) for i in range(spec.components)]
    incoming: dict[int, list[tuple[int, int, float]]] = {i: [] for i in range(spec.components)}
    for src, dst, lag, weight in spec.planted_edges:
        incoming[dst].append((src, lag, weight))
    for idx, edges_in in incoming.items():
        if len(edges_in) > spec.latents_per_component:
            raise SynthError(
                f"component {names[idx]} has {len(edges_in)} incoming edges but only "
                f"{spec.latents_per_component} latent slots"
            )

    latents: dict[str, np.ndarray] = {}
    planted: list[PlantedEdge] = []
    for idx in spec._toposort():
        base, edge_noise = _component_latents(spec, idx, horizon)
        final = base.copy()
        for slot, (src, lag, weight) in enumerate(incoming[idx]):
            src_latent = latents[names[src]][0]
            target = np.empty(horizon)
            target[lag:] = weight * src_latent[: horizon - lag]
            target[:lag] = weight * src_latent[0]
            noise_sd = EDGE_NOISE_RATIO * abs(weight) * float(np.std(src_latent))
            final[slot] = target + noise_sd * edge_noise[slot]
            planted.append(
                PlantedEdge(
                    src=names[src],
                    dst=names[idx],
                    lag_steps=lag,
                    weight=weight,
                    src_latent=0,
                    dst_latent=slot,
                )
            )
        latents[names[idx]] = final
    planted.sort(key=lambda e: (e.src, e.dst))
    return latents, tuple(planted)


def _metric_name(latent: int, j: int) -> str:
    return f"l{latent}_m{j:02d}"


def _metric_series(
    spec: SynthSpec,
    comp_idx: int,
    metric_idx: int,
    name: str,
    latent: np.ndarray,
    stream: int | None = None,
) -> MetricSeries:
    rng = _rng(spec.seed, comp_idx, 1 + (stream if stream is not None else metric_idx))
    scale = rng.uniform(0.5, 3.0)
    offset = rng.uniform(-10.0, 10.0)
    noise = rng.normal(0.0, 1.0, size=len(latent))
    spread = float(np.std(latent[LAG_MARGIN:]))
    values = scale * latent + offset + spec.noise_sigma * spread * noise
    trimmed = values[LAG_MARGIN : LAG_MARGIN + spec.length]
    samples = tuple(
        RawSample(timestamp_ms=i * spec.interval_ms, value=float(v))
        for i, v in enumerate(trimmed)
    )
    return MetricSeries(
        component=spec.component_name(comp_idx), metric=name, samples=samples
    )


def generate(spec: SynthSpec, seed: int | None = None) -> tuple[MetricCatalog, GroundTruth]:
    """Deterministically generate a catalog and its ground truth from a spec.

    An explicit seed overrides spec.seed.
    """
    if seed is not None and seed != spec.seed:
        spec = replace(spec, seed=seed)
    latents, planted = _resolve_latents(spec)
    series: list[MetricSeries] = []
    assignment: dict[str, dict[str, int]] = {}
    for idx in range(spec.components):
        comp = spec.component_name(idx)
        comp_assignment: dict[str, int] = {}
        for j in range(spec.metrics_per_component):
            slot = j % spec.latents_per_component
            name = _metric_name(slot, j)
            series.append(_metric_series(spec, idx, j, name, latents[comp][slot]))
            comp_assignment[name] = slot
        assignment[comp] = comp_assignment
    catalog = MetricCatalog(series=tuple(sorted(series, key=lambda s: s.key)))
    truth = GroundTruth(spec=spec, assignment=assignment, edges=planted)
    return catalog, truth


@dataclass(frozen=True)
class Fault:
    component: str
    kind: str  # ADD_METRIC | DROP_METRIC | CHANGE_LAG
    params: dict

    def __post_init__(self) -> None:
        if self.kind not in ("ADD_METRIC", "DROP_METRIC", "CHANGE_LAG"):
            raise SynthError(f"unknown fault kind {self.kind!r}")


def inject_fault(
    catalog: MetricCatalog, truth: GroundTruth, fault: Fault
) -> tuple[MetricCatalog, GroundTruth]:
    """Apply one fault, returning the updated catalog and ground truth.

    ADD_METRIC appends one new noisy metric to the component; DROP_METRIC
    removes one (never the last); CHANGE_LAG rewrites a planted edge's lag and
    regenerates, which by construction only changes the series downstream of
    that edge.
    """
    spec = truth.spec
    comp_names = [spec.component_name(i) for i in range(spec.components)]
    if fault.kind != "CHANGE_LAG" and fault.component not in comp_names:
        raise SynthError(f"unknown component {fault.component!r}")

    if fault.kind == "DROP_METRIC":
        current = sorted(truth.assignment[fault.component])
        metric = fault.params.get("metric") or current[0]
        if metric not in current:
            raise SynthError(f"{fault.component} has no metric {metric!r}")
        if len(current) == 1:
            raise SynthError(f"cannot drop the last metric of {fault.component}")
        new_series = tuple(
            s for s in catalog.series if (s.component, s.metric) != (fault.component, metric)
        )
        new_assignment = {
            c: {m: l for m, l in ms.items() if not (c == fault.component and m == metric)}
            for c, ms in truth.assignment.items()
        }
        return MetricCatalog(series=new_series), replace(truth, assignment=new_assignment)

    if fault.kind == "ADD_METRIC":
        slot = int(fault.params.get("latent", 0))
        if not (0 <= slot < spec.latents_per_component):
            raise SynthError(f"latent slot {slot} out of range")
        comp_idx = comp_names.index(fault.component)
        existing = truth.assignment[fault.component]
        name = fault.params.get("metric") or f"fault_l{slot}_m{len(existing):02d}"
        if name in existing:
            raise SynthError(f"{fault.component} already has metric {name!r}")
        latents, _ = _resolve_latents(spec)
        added = _metric_series(
            spec, comp_idx, 0, name, latents[fault.component][slot],
            stream=10_000 + len(existing),
        )
        new_series = tuple(sorted(catalog.series + (added,), key=lambda s: s.key))
        new_assignment = {c: dict(ms) for c, ms in truth.assignment.items()}
        new_assignment[fault.component][name] = slot
        return MetricCatalog(series=new_series), replace(truth, assignment=new_assignment)

    # CHANGE_LAG
    src = fault.params.get("src", fault.component)
    dst = fault.params["dst"]
    new_lag = int(fault.params["lag_steps"])
    src_idx, dst_idx = comp_names.index(src), comp_names.index(dst)
    edges = list(spec.planted_edges)
    hits = [i for i, (s, d, _, _) in enumerate(edges) if (s, d) == (src_idx, dst_idx)]
    if not hits:
        raise SynthError(f"no planted edge {src}->{dst} to re-lag")
    s, d, _, w = edges[hits[0]]
    edges[hits[0]] = (s, d, new_lag, w)
    new_spec = replace(spec, planted_edges=tuple(edges))
    new_catalog, new_truth = generate(new_spec)
    return new_catalog, new_truth


def save_truth(truth: GroundTruth, path: str | Path) -> None:
    doc = {
        "spec": {
            "components": truth.spec.components,
            "latents_per_component": truth.spec.latents_per_component,
            "metrics_per_component": truth.spec.metrics_per_component,
            "planted_edges": [list(e) for e in truth.spec.planted_edges],
            "noise_sigma": truth.spec.noise_sigma,
            "length": truth.spec.length,
            "interval_ms": truth.spec.interval_ms,
            "seed": truth.spec.seed,
        },
        "assignment": {c: dict(sorted(ms.items())) for c, ms in sorted(truth.assignment.items())},
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "lag_steps": e.lag_steps,
                "weight": e.weight,
                "src_latent": e.src_latent,
                "dst_latent": e.dst_latent,
            }
            for e in truth.edges
        ],
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path: str | Path) -> SynthSpec:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    return spec_from_dict(doc)


def spec_from_dict(doc: dict) -> SynthSpec:
    return SynthSpec(
        components=int(doc["components"]),
        latents_per_component=int(doc["latents_per_component"]),
        metrics_per_component=int(doc["metrics_per_component"]),
        planted_edges=tuple(tuple(e) for e in doc.get("planted_edges", [])),
        noise_sigma=float(doc.get("noise_sigma", 0.1)),
        length=int(doc.get("length", 512)),
        interval_ms=int(doc.get("interval_ms", 500)),
        seed=int(doc.get("seed", 0)),
    )


def load_truth(path: str | Path) -> GroundTruth:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    return GroundTruth(
        spec=spec_from_dict(doc["spec"]),
        assignment={c: {m: int(l) for m, l in ms.items()} for c, ms in doc["assignment"].items()},
        edges=tuple(
            PlantedEdge(
                src=e["src"],
                dst=e["dst"],
                lag_steps=int(e["lag_steps"]),
                weight=float(e["weight"]),
                src_latent=int(e["src_latent"]),
                dst_latent=int(e["dst_latent"]),
            )
            for e in doc["edges"]
        ),
    )
